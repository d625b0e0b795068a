//! Launcher tests against the real binary: output format, exit codes, and
//! flag/environment precedence.

use std::process::{Command, Output};

fn mpignite() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpignite"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn matvec_local_prints_results_and_sum() {
    let out = mpignite()
        .args(["run", "matvec", "-n", "8"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("results [14, 32, 50, 0, 0, 0, 0, 0]"),
        "got: {text}"
    );
    assert!(text.contains("sum 96"), "got: {text}");
}

#[test]
fn repeated_runs_print_identical_results() {
    let run = || {
        let out = mpignite()
            .args(["run", "ring", "-n", "16"])
            .output()
            .unwrap();
        assert!(out.status.success());
        stdout(&out)
    };
    let first = run();
    assert!(first.contains("root token 15"));
    assert_eq!(first, run());
}

#[test]
fn cluster_mode_agrees_with_local() {
    let local = mpignite()
        .args(["run", "matvec2d", "-n", "9"])
        .output()
        .unwrap();
    let cluster = mpignite()
        .args([
            "run",
            "matvec2d",
            "-n",
            "9",
            "--mode",
            "cluster",
            "--routing",
            "relay",
        ])
        .output()
        .unwrap();
    assert!(local.status.success());
    assert!(cluster.status.success(), "stderr: {}", stderr(&cluster));
    assert_eq!(stdout(&local), stdout(&cluster));
    assert!(stdout(&local).contains("rows [14, 32, 50]"));
}

#[test]
fn incompatible_process_count_is_usage_error_2() {
    let out = mpignite()
        .args(["run", "matvec2d", "-n", "8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("requires exactly 9 ranks"));
}

#[test]
fn zero_ranks_is_usage_error_2() {
    let out = mpignite()
        .args(["run", "ring", "-n", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_example_is_usage_error_2() {
    let out = mpignite()
        .args(["run", "sort", "-n", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn routing_env_applies_and_flag_overrides_it() {
    // environment sets relay
    let out = mpignite()
        .args(["run", "ring", "-n", "4", "--log-level", "info"])
        .env("MPIGNITE_ROUTING", "relay")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(
        stderr(&out).contains("routing=relay"),
        "stderr: {}",
        stderr(&out)
    );

    // explicit flag wins over the environment
    let out = mpignite()
        .args(["run", "ring", "-n", "4", "--routing", "p2p"])
        .env("MPIGNITE_ROUTING", "relay")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(
        stderr(&out).contains("routing=p2p"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn master_and_worker_processes_run_an_example_end_to_end() {
    // Pick a free port by binding and releasing it.
    let port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let master_addr = format!("127.0.0.1:{port}");

    let mut workers: Vec<_> = (0..2)
        .map(|_| {
            mpignite()
                .args([
                    "worker",
                    "--master",
                    &master_addr,
                    "--listen",
                    "127.0.0.1:0",
                ])
                .stdout(std::process::Stdio::null())
                .stderr(std::process::Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();

    let master = mpignite()
        .args([
            "master",
            "--listen",
            &master_addr,
            "--workers",
            "2",
            "evenodd",
            "-n",
            "10",
        ])
        .output()
        .unwrap();
    assert!(master.status.success(), "stderr: {}", stderr(&master));
    assert!(stdout(&master).contains("parities [true, false, true, false, true]"));

    for worker in &mut workers {
        let status = worker.wait().unwrap();
        assert!(status.success(), "workers exit 0 after SHUTDOWN");
    }
}
