//! Cluster-mode integration tests over loopback TCP: lazy endpoint
//! establishment, routing-mode equivalence, same-worker fast paths, and
//! failure propagation.

use std::sync::Arc;

use mpignite::examples;
use mpignite::{
    FrameKind, FunctionRegistry, Kind, LocalRuntime, Master, RoutingMode, RuntimeError, Transport,
    Value, Worker,
};

mod common;
use common::{encoded, Cluster};

fn empty_registry() -> Arc<FunctionRegistry> {
    Arc::new(FunctionRegistry::new())
}

#[test]
fn lazy_endpoint_amortization_one_addr_req_per_worker() {
    // Two workers; ranks 0,2,4,6 on worker A and 1,3,5,7 on worker B.
    // Rank 0 sends to 5, 7, then 1 — three ranks, one uncontacted worker.
    let mut registry = FunctionRegistry::new();
    registry.register("fanout", |world, _| {
        match world.rank() {
            0 => {
                for dst in [5, 7, 1] {
                    world.send(dst, 0, &Value::I32(dst as i32))?;
                }
            }
            1 | 5 | 7 => {
                let got = world.receive(0, 0, Kind::I32)?;
                assert_eq!(got, Value::I32(world.rank() as i32));
            }
            _ => {}
        }
        Ok(Value::Unit)
    });
    let cluster = Cluster::start(2, Arc::new(registry));
    cluster
        .master
        .parallelize_func("fanout")
        .unwrap()
        .execute(8)
        .unwrap();

    let sender = cluster.workers[0].transport();
    let receiver = cluster.workers[1].transport();
    assert_eq!(
        sender.counters().sent(FrameKind::AddrReq),
        1,
        "three sends to one uncontacted worker must resolve it exactly once"
    );
    assert_eq!(sender.counters().sent(FrameKind::UserMsg), 3);
    // The receiving side never initiates anything: receives are served
    // from its own mailboxes.
    assert_eq!(receiver.counters().sent(FrameKind::AddrReq), 0);
    assert_eq!(receiver.counters().sent(FrameKind::UserMsg), 0);
    cluster.shutdown();
}

#[test]
fn same_worker_delivery_emits_no_frames() {
    // One worker hosts everything: all traffic is mailbox-direct.
    let mut registry = FunctionRegistry::new();
    registry.register("pair", |world, _| {
        if world.rank() == 0 {
            world.send(1, 0, &Value::Str("hi".into()))?;
        } else {
            world.receive(0, 0, Kind::Str)?;
        }
        Ok(Value::Unit)
    });
    let cluster = Cluster::start(1, Arc::new(registry));
    cluster
        .master
        .parallelize_func("pair")
        .unwrap()
        .execute(2)
        .unwrap();
    let w = cluster.workers[0].transport();
    assert_eq!(w.counters().sent(FrameKind::UserMsg), 0);
    assert_eq!(w.counters().sent(FrameKind::AddrReq), 0);
    cluster.shutdown();
}

#[test]
fn ring_frame_accounting_under_both_routings() {
    let registry = Arc::new(examples::registry());

    // P2P: each of three workers dials exactly one peer (its successor in
    // the ring) and relays nothing through the master.
    let cluster = Cluster::start(3, registry.clone());
    let p2p = cluster
        .master
        .parallelize_func(examples::RING)
        .unwrap()
        .with_routing(RoutingMode::PeerToPeer)
        .execute(16)
        .unwrap();
    for w in &cluster.workers {
        let c = w.transport().counters();
        assert_eq!(
            c.sent(FrameKind::Hello),
            2,
            "one master HELLO, one peer dial"
        );
        assert_eq!(c.sent(FrameKind::AddrReq), 1);
        assert_eq!(c.sent(FrameKind::UserMsg), 5, "five cross-worker hops each");
    }
    assert_eq!(cluster.master.counters().sent(FrameKind::UserMsg), 0);
    cluster.shutdown();

    // Relay: no peer connections at all; the master forwards every
    // cross-worker hop.
    let cluster = Cluster::start(3, registry);
    let relay = cluster
        .master
        .parallelize_func(examples::RING)
        .unwrap()
        .with_routing(RoutingMode::MasterRelay)
        .execute(16)
        .unwrap();
    for w in &cluster.workers {
        let c = w.transport().counters();
        assert_eq!(c.sent(FrameKind::Hello), 1, "only the master handshake");
        assert_eq!(c.sent(FrameKind::AddrReq), 0);
        assert_eq!(c.sent(FrameKind::UserMsg), 5);
    }
    assert_eq!(cluster.master.counters().sent(FrameKind::UserMsg), 15);
    cluster.shutdown();

    assert_eq!(encoded(&p2p), encoded(&relay), "routing modes must agree");
}

#[test]
fn cluster_matches_local_for_every_example() {
    let registry = Arc::new(examples::registry());
    let local_rt = LocalRuntime::new(registry.clone());
    for (name, n) in [
        (examples::MATVEC, 8),
        (examples::RING, 16),
        (examples::EVEN_ODD, 10),
        (examples::MATVEC_2D, 9),
    ] {
        let local = local_rt.parallelize_func(name).unwrap().execute(n).unwrap();
        let cluster = Cluster::start(3, registry.clone());
        let remote = cluster
            .master
            .parallelize_func(name)
            .unwrap()
            .execute(n)
            .unwrap();
        cluster.shutdown();
        assert_eq!(
            encoded(&local),
            encoded(&remote),
            "{name} must agree between local and cluster"
        );
    }
}

#[test]
fn sequential_jobs_reuse_one_cluster() {
    let registry = Arc::new(examples::registry());
    let cluster = Cluster::start(3, registry);
    for _ in 0..3 {
        let results = cluster
            .master
            .parallelize_func(examples::RING)
            .unwrap()
            .execute(9)
            .unwrap();
        assert_eq!(results[0], Value::I32(8));
    }
    cluster.shutdown();
}

#[test]
fn worker_unknown_function_fails_those_ranks() {
    // The driver knows "ghost" but the workers do not: every rank fails at
    // the worker with a registry error.
    let mut master_registry = FunctionRegistry::new();
    master_registry.register("ghost", |_, _| Ok(Value::Unit));
    let cluster = Cluster::start_split(2, Arc::new(master_registry), empty_registry());
    let err = cluster
        .master
        .parallelize_func("ghost")
        .unwrap()
        .execute(4)
        .unwrap_err();
    match err {
        RuntimeError::JobFailed { failures } => {
            assert_eq!(failures.len(), 4);
            assert!(failures[0].message.contains("unknown function"));
        }
        other => panic!("unexpected error {other}"),
    }
    cluster.shutdown();
}

#[test]
fn unregistered_name_is_an_error_at_submit() {
    let cluster = Cluster::start(1, empty_registry());
    assert!(matches!(
        cluster.master.parallelize_func("missing"),
        Err(RuntimeError::UnknownFunction(_))
    ));
    cluster.shutdown();
}

#[test]
fn failing_rank_aborts_blocked_peers_cluster_wide() {
    let mut registry = FunctionRegistry::new();
    registry.register("half-broken", |world, _| {
        if world.rank() == 3 {
            Err(mpignite::CommError::app("rank three gives up"))
        } else {
            // Nobody ever sends this; only the fail-fast abort frees it.
            world.receive(world.rank(), 17, Kind::Unit)?;
            Ok(Value::Unit)
        }
    });
    let cluster = Cluster::start(3, Arc::new(registry));
    let err = cluster
        .master
        .parallelize_func("half-broken")
        .unwrap()
        .execute(6)
        .unwrap_err();
    match err {
        RuntimeError::JobFailed { failures } => {
            assert_eq!(failures[0].rank, 3, "originating rank comes first");
            assert!(failures[0].message.contains("rank three gives up"));
            assert_eq!(failures.len(), 6, "every blocked rank reports an abort");
        }
        other => panic!("unexpected error {other}"),
    }
    cluster.shutdown();
}

#[test]
fn params_blob_reaches_cluster_ranks() {
    let mut registry = FunctionRegistry::new();
    registry.register("scale", |world, params| {
        let factor = params
            .and_then(Value::as_i64)
            .ok_or_else(|| mpignite::CommError::app("missing params"))?;
        Ok(Value::I64(factor * world.rank() as i64))
    });
    let cluster = Cluster::start(2, Arc::new(registry));
    let results = cluster
        .master
        .parallelize_func("scale")
        .unwrap()
        .with_params(Value::I64(10))
        .execute(4)
        .unwrap();
    cluster.shutdown();
    assert_eq!(
        results,
        vec![
            Value::I64(0),
            Value::I64(10),
            Value::I64(20),
            Value::I64(30)
        ]
    );
}

#[test]
fn no_workers_is_an_error() {
    let mut registry = FunctionRegistry::new();
    registry.register("idle", |_, _| Ok(Value::Unit));
    let master = Master::bind("127.0.0.1:0", Arc::new(registry)).unwrap();
    let err = master
        .parallelize_func("idle")
        .unwrap()
        .execute(2)
        .unwrap_err();
    assert!(matches!(err, RuntimeError::NoWorkers));
    master.shutdown().unwrap();
}

#[test]
fn worker_exits_nonzero_when_master_connection_drops() {
    use std::net::TcpListener;

    // A minimal fake master: complete the HELLO handshake, then hang up.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let fake = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let (kind, body) = mpignite::wire::read_frame(&mut stream).unwrap();
        assert_eq!(kind, FrameKind::Hello);
        let hello = mpignite::wire::Hello::decode(&body).unwrap();
        let reply = mpignite::wire::Hello {
            worker_id: 42,
            ..hello
        };
        mpignite::wire::write_frame_to(&mut stream, FrameKind::Hello, &reply.encode()).unwrap();
        // dropping the stream severs the master link
    });

    let worker = Worker::connect(&addr, "127.0.0.1:0", empty_registry()).unwrap();
    assert_eq!(worker.worker_id(), 42);
    fake.join().unwrap();
    let err = worker.run().unwrap_err();
    assert!(err.to_string().contains("master connection lost"));
}

#[test]
fn split_collectives_run_cross_worker() {
    // matvec2d exercises split + broadcast + all_reduce with ranks spread
    // across three workers in both routing modes.
    let registry = Arc::new(examples::registry());
    for routing in [RoutingMode::PeerToPeer, RoutingMode::MasterRelay] {
        let cluster = Cluster::start(3, registry.clone());
        let results = cluster
            .master
            .parallelize_func(examples::MATVEC_2D)
            .unwrap()
            .with_routing(routing)
            .execute(9)
            .unwrap();
        cluster.shutdown();
        let expected: Vec<Value> = [14, 14, 14, 32, 32, 32, 50, 50, 50]
            .into_iter()
            .map(Value::I32)
            .collect();
        assert_eq!(results, expected, "routing {routing}");
    }
}

#[test]
fn fifo_holds_across_workers_under_both_routings() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    // Two workers, two ranks, everything cross-worker: rank 0 interleaves
    // sequence-stamped sends over three tags; rank 1 drains class by class
    // in a shuffled order and checks sequence numbers ascend.
    let mut registry = FunctionRegistry::new();
    registry.register("bursts", |world, _| {
        const BURSTS: u64 = 100;
        const TAGS: i32 = 3;
        for burst in 0..BURSTS {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xabcd ^ burst);
            let mut plan: Vec<i32> = (0..TAGS).flat_map(|t| std::iter::repeat_n(t, 4)).collect();
            plan.shuffle(&mut rng);
            if world.rank() == 0 {
                let mut seq = [0i32; TAGS as usize];
                for &tag in &plan {
                    world.send(1, tag, &Value::I32(seq[tag as usize]))?;
                    seq[tag as usize] += 1;
                }
            } else {
                let mut order: Vec<i32> = (0..TAGS).collect();
                order.shuffle(&mut rng);
                for tag in order {
                    for expected in 0..4 {
                        let got = world.receive(0, tag, Kind::I32)?;
                        if got != Value::I32(expected) {
                            return Err(mpignite::CommError::app(format!(
                                "burst {burst} tag {tag}: saw {got}, wanted {expected}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Value::Bool(true))
    });
    let registry = Arc::new(registry);
    for routing in [RoutingMode::PeerToPeer, RoutingMode::MasterRelay] {
        let cluster = Cluster::start(2, registry.clone());
        let results = cluster
            .master
            .parallelize_func("bursts")
            .unwrap()
            .with_routing(routing)
            .execute(2)
            .unwrap();
        cluster.shutdown();
        assert_eq!(results, vec![Value::Bool(true); 2], "routing {routing}");
    }
}
