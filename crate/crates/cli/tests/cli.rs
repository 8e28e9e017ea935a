use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use b92sim::protocol::{read_record, SiftedKey};

fn b92sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_b92sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SHORT: &str = "clock = 1e9\ncollection_time = 0.002\n";

#[test]
fn sweep_csv_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SHORT}distances = 0, 5\nwindows = 0.5, 0.98\n"));
    let o = b92sim(&["sweep", "--config", &cfg, "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "distance_km,clock_hz,window_fraction,r_raw,r_sift,r_net,qber_percent,insecure"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0.00,1000000000,0.5,"));
    assert!(lines[4].starts_with("5.00,1000000000,0.98,"));
}

#[test]
fn serial_and_parallel_output_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SHORT}distances = 0, 2, 4, 6\nwindows = 0.3, 0.7\n"),
    );
    let a = b92sim(&["sweep", "--config", &cfg, "--seed", "8", "--serial"]);
    let b = b92sim(&["sweep", "--config", &cfg, "--seed", "8"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn json_report_echoes_config_seed_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("r.json");
    let o = b92sim(&[
        "sweep",
        "--config",
        &cfg,
        "--seed",
        "42",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["command"], "sweep");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(
        v["config"]["protocol.clock"]
            .as_str()
            .map(|s| s.parse::<f64>().unwrap()),
        Some(1e9)
    );
    assert!(v["results"][0]["qber"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_writes_record_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let rec = dir.path().join("session.csv");
    let key = dir.path().join("key.txt");
    let o = b92sim(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        rec.to_str().unwrap(),
        "--key",
        key.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let record = read_record(BufReader::new(fs::File::open(&rec).unwrap())).unwrap();
    assert_eq!(record.config.seed, 5);
    assert!(!record.events.is_empty());
    let k = SiftedKey::read_text(BufReader::new(fs::File::open(&key).unwrap())).unwrap();
    assert_eq!(k, b92sim::protocol::sift(&record, 0.5).unwrap());
}

#[test]
fn histogram_and_attack_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let h = b92sim(&["histogram", "--config", &cfg]);
    assert!(h.status.success());
    let text = stdout(&h);
    assert_eq!(text.lines().next(), Some("bin_start_ps,ch0,ch1"));
    assert_eq!(text.lines().count(), 1025);

    let a = b92sim(&["attack", "--config", &cfg]);
    assert!(a.status.success());
    let text = stdout(&a);
    assert!(text.contains("\nrate_ratio,"));
    assert!(text.contains("\nverdict,suspect"));
}

#[test]
fn tables_print_simulated_next_to_reference() {
    let o = b92sim(&[
        "tables",
        "--table",
        "100mhz",
        "--duration-scale",
        "0.001",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("table,distance_km,window_fraction,fitted_loss_db"));
    assert_eq!(lines.len(), 1 + 9 * 2);
    assert!(lines[1].starts_with("100MHz,0.00,0.5,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(b92sim(&["sweep", "--config", &bad]).status.code(), Some(1));
    assert_eq!(b92sim(&["sweep", "--duration-scale", "-1"]).status.code(), Some(1));
    assert_eq!(b92sim(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        b92sim(&["sweep", "--config", "/nonexistent/exp.cfg"]).status.code(),
        Some(2)
    );
    let cfg = write_config(dir.path(), SHORT);
    assert_eq!(
        b92sim(&["sweep", "--config", &cfg, "--out", "/nonexistent/dir/out.csv"])
            .status
            .code(),
        Some(2)
    );
    let dark = write_config(
        dir.path(),
        "clock = 1e9\ncollection_time = 1e-4\nextra_attenuation = 300\nreceiver.dark_rate = 0\n",
    );
    assert_eq!(b92sim(&["sweep", "--config", &dark]).status.code(), Some(3));
    assert_eq!(b92sim(&["--version"]).status.code(), Some(0));
}
