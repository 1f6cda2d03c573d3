use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use zog::attack::AttackConfig;
use zog::estimator::{estimate_gradient, EstimatorConfig};
use zog::harness::desk_benchmark;
use zog::mlp::{gen_model, MlpModel};
use zog::oracle::{LocalOracle, Oracle, OracleError, TargetLoss};
use zog::remote::{OracleServer, RemoteOracle, RunningServer, WireResponse, GREETING};
use zog::{run_attack, DirectionKind, SeededRng, Sidedness};

fn small_model() -> (MlpModel, Vec<Vec<f64>>) {
    let (model, probes) = gen_model(&[8, 6], 4, 5, 3).unwrap();
    (model, probes.into_iter().map(|p| p.x).collect())
}

fn serve(model: MlpModel, budget: u64, max_connections: usize) -> RunningServer {
    OracleServer::bind(model, "127.0.0.1:0", budget, max_connections)
        .unwrap()
        .spawn()
        .unwrap()
}

/// Raw line-level client for protocol tests.
struct RawClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl RawClient {
    fn connect(server: &RunningServer) -> Self {
        let stream = TcpStream::connect(server.addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        let writer = stream.try_clone().unwrap();
        let mut client = Self {
            reader: BufReader::new(stream),
            writer,
        };
        assert_eq!(client.read_line().trim_end(), GREETING);
        client
    }

    fn read_line(&mut self) -> String {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        line
    }

    fn send(&mut self, raw: &[u8]) -> WireResponse {
        self.writer.write_all(raw).unwrap();
        serde_json::from_str(&self.read_line()).unwrap()
    }
}

#[test]
fn logits_cross_the_wire_bit_for_bit() {
    let (model, points) = small_model();
    let local = LocalOracle::new(model.clone(), 100);
    let server = serve(model, 100, 4);
    let remote = RemoteOracle::connect(server.addr()).unwrap();
    assert_eq!((remote.input_dim(), remote.num_classes()), (8, 4));
    for x in &points {
        assert_eq!(remote.logits(x).unwrap(), local.logits(x).unwrap());
    }
    assert_eq!(remote.ledger().used(), points.len() as u64);
    assert_eq!(server.ledger().used(), points.len() as u64);
}

#[test]
fn remote_attacks_match_local_attacks() {
    let (model, probes) = desk_benchmark();
    let cfg = AttackConfig::new(EstimatorConfig::new(DirectionKind::Rademacher, Sidedness::TwoSided));
    for (budget, succeeds) in [(cfg.budget, true), (250, false)] {
        let cfg = AttackConfig { budget, ..cfg.clone() };
        let local = LocalOracle::new(model.clone(), budget);
        let expected = run_attack(&local, &probes[0].x, &cfg, &mut SeededRng::new(5), None).unwrap();
        assert_eq!(expected.success, succeeds);
        let server = serve(model.clone(), budget, 4);
        let remote = RemoteOracle::connect(server.addr()).unwrap();
        let got = run_attack(&remote, &probes[0].x, &cfg, &mut SeededRng::new(5), None).unwrap();
        assert_eq!(got, expected);
        assert_eq!(server.ledger().used(), expected.queries);
    }
}

#[test]
fn clients_share_one_budget() {
    let (model, points) = small_model();
    let server = serve(model, 5, 4);
    let a = RemoteOracle::connect(server.addr()).unwrap();
    let b = RemoteOracle::connect(server.addr()).unwrap();
    for _ in 0..3 {
        a.logits(&points[0]).unwrap();
    }
    b.logits(&points[1]).unwrap();
    b.logits(&points[1]).unwrap();
    assert_eq!(b.ledger().used(), 5);
    assert!(b.logits(&points[1]).unwrap_err().is_budget());
    assert!(a.logits(&points[0]).unwrap_err().is_budget());
    assert_eq!(a.refresh().unwrap(), 5);
    assert_eq!(server.ledger().used(), 5);
}

#[test]
fn exhausted_server_budget_stops_an_estimate() {
    let (model, points) = small_model();
    let server = serve(model, 10, 4);
    let remote = RemoteOracle::connect(server.addr()).unwrap();
    let loss = TargetLoss::new(&remote, 1).unwrap();
    let cfg = EstimatorConfig::new(DirectionKind::Gaussian, Sidedness::TwoSided).with_samples(8);
    let err = estimate_gradient(&loss, &points[0], &cfg, &mut SeededRng::new(1)).unwrap_err();
    assert!(err.is_budget());
    assert_eq!(err.spent(), 10);
    assert_eq!(server.ledger().used(), 10);
}

#[test]
fn dead_port_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    match RemoteOracle::connect(("127.0.0.1", port)) {
        Err(OracleError::Transport(_)) => {}
        Err(other) => panic!("expected transport error, got {other}"),
        Ok(_) => panic!("connected to a closed port"),
    }
}

#[test]
fn meta_reports_shape_and_ledger() {
    let (model, points) = small_model();
    let server = serve(model, 42, 4);
    let mut raw = RawClient::connect(&server);
    let x = serde_json::to_string(&points[0]).unwrap();
    let r = raw.send(format!("{{\"id\":1,\"op\":\"logits\",\"x\":{x}}}\n").as_bytes());
    assert_eq!((r.id, r.used, r.logits.map(|l| l.len())), (Some(1), Some(1), Some(4)));
    let meta = raw.send(b"{\"id\":2,\"op\":\"meta\"}\n");
    assert_eq!(meta.id, Some(2));
    assert_eq!(meta.input_dim, Some(8));
    assert_eq!(meta.num_classes, Some(4));
    assert_eq!(meta.used, Some(1));
    assert_eq!(meta.budget, Some(42));
}

#[test]
fn malformed_requests_get_error_codes_and_cost_nothing() {
    let (model, _) = small_model();
    let server = serve(model, 10, 4);
    let mut raw = RawClient::connect(&server);
    let cases: &[(&[u8], Option<u64>, &str)] = &[
        (b"not json\n", None, "bad_request"),
        (b"{}\n", None, "bad_request"),
        (b"[1,2,3]\n", None, "bad_request"),
        (b"{\"id\":3,\"op\":\"explode\"}\n", Some(3), "bad_request"),
        (b"{\"id\":4,\"op\":\"logits\"}\n", Some(4), "bad_request"),
        (b"{\"id\":5,\"op\":\"logits\",\"x\":[1.0]}\n", Some(5), "bad_dim"),
        (b"{\"id\":6,\"op\":\"logits\",\"x\":\"abc\"}\n", Some(6), "bad_request"),
        (b"{\"id\":7,\"op\":\"meta\",\"extra\":1}\n", Some(7), "bad_request"),
        (b"{\"id\":-1,\"op\":\"meta\"}\n", None, "bad_request"),
        (b"\xff\xfe\n", None, "bad_request"),
    ];
    for (line, id, code) in cases {
        let r = raw.send(line);
        assert_eq!(r.error.as_deref(), Some(*code), "{}", String::from_utf8_lossy(line));
        assert_eq!(r.id, *id, "{}", String::from_utf8_lossy(line));
        assert!(r.logits.is_none());
    }
    assert_eq!(server.ledger().used(), 0);
    let meta = raw.send(b"{\"id\":8,\"op\":\"meta\"}\n");
    assert_eq!(meta.used, Some(0));
}

#[test]
fn random_garbage_never_kills_the_server() {
    let (model, points) = small_model();
    let server = serve(model, 10, 4);
    let mut rng = SeededRng::new(99);
    let mut raw = RawClient::connect(&server);
    for _ in 0..200 {
        let len = (rng.uniform(0.0, 40.0)) as usize;
        let mut line: Vec<u8> = (0..len)
            .map(|_| rng.uniform(0.0, 256.0) as u8)
            .filter(|&b| b != b'\n')
            .collect();
        line.push(b'\n');
        let r = raw.send(&line);
        assert!(r.error.is_some());
    }
    let remote = RemoteOracle::connect(server.addr()).unwrap();
    remote.logits(&points[0]).unwrap();
    assert_eq!(server.ledger().used(), 1);
}

#[test]
fn connections_beyond_the_limit_are_refused_busy() {
    let (model, _) = small_model();
    let server = serve(model, 10, 1);
    let _first = RawClient::connect(&server);
    let mut second = RawClient::connect(&server);
    let r: WireResponse = serde_json::from_str(&second.read_line()).unwrap();
    assert_eq!(r.error.as_deref(), Some("busy"));
}

#[test]
fn stopping_the_server_closes_the_port() {
    let (model, _) = small_model();
    let server = serve(model, 10, 4);
    let addr = server.addr();
    server.stop().unwrap();
    assert!(RemoteOracle::connect(addr).is_err());
}
