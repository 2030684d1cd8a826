use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ptk(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptk"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn corpus(dir: &Path) {
    let words = [
        "alpha", "river", "stone", "quiet", "maple", "orbit", "ember", "harbor", "copper", "falcon", "island", "raven",
        "walnut", "zephyr", "candle", "dragon",
    ];
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut lines = String::new();
    for i in 0..40 {
        let text: Vec<&str> = (0..60).map(|_| words[(next() % words.len() as u64) as usize]).collect();
        let text = text.join(" ");
        let domain = ["web", "code", "math"][i % 3];
        lines += &format!("{{\"id\":\"d{i}\",\"text\":\"{text}\",\"domain\":\"{domain}\",\"score\":4}}\n");
        if i % 4 == 0 {
            lines += &format!("{{\"id\":\"d{i}-copy\",\"text\":\"{text}\",\"domain\":\"{domain}\",\"score\":4}}\n");
        }
    }
    fs::write(dir.join("in.jsonl"), lines).unwrap();
    fs::write(
        dir.join("bench.jsonl"),
        "{\"id\":\"q\",\"text\":\"unrelated benchmark question text that never appears anywhere else\",\"domain\":\"web\"}\n",
    )
    .unwrap();
}

#[test]
fn run_is_deterministic_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    fs::write(
        dir.path().join("run.toml"),
        "seed = 3\ninput = [\"missing.jsonl\"]\noutput = \"from-config\"\n[decontam]\nbenchmarks = [\"bench.jsonl\"]\n[pack]\nseq_len = 256\n",
    )
    .unwrap();
    let args = |out: &'static str| ["run", "--config", "run.toml", "--input", "in.jsonl", "--output", out, "--seed", "9"];
    let a = ok(&ptk(&args("a"), dir.path()));
    let b = ok(&ptk(&args("b"), dir.path()));
    assert_eq!(a, b);
    assert_eq!(a["seed"], 9);
    assert_eq!(a["input_count"], 50);
    assert_eq!(a["dedup"]["removed_count"], 10);
    assert!(!dir.path().join("from-config").exists());
    assert_eq!(
        fs::read(dir.path().join("a/manifest.json")).unwrap(),
        fs::read(dir.path().join("b/manifest.json")).unwrap()
    );
}

#[test]
fn single_stage_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let m = ok(&ptk(&["dedup", "--input", "in.jsonl", "--output", "d", "--threshold", "0.9"], dir.path()));
    assert_eq!(m["output_count"], 40);
    assert!(dir.path().join("d/clusters.tsv").exists());
    let m = ok(&ptk(&["decontam", "--input", "d/dedup.jsonl", "--output", "c", "--benchmark", "bench.jsonl"], dir.path()));
    assert_eq!(m["removed_count"], 0);
    let m = ok(&ptk(&["pack", "--input", "c/decontam.jsonl", "--output", "p", "--seq-len", "128"], dir.path()));
    assert_eq!(m["pack"]["seq_len"], 128);
    assert!(dir.path().join("p/packed.bin").exists());
    let s = ok(&ptk(&["stats", "--input", "in.jsonl"], dir.path()));
    let total: f64 = s["per_domain_fraction"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn plan_commands_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let files = ok(&ptk(&["plan", "--output", "plan"], dir.path()));
    assert_eq!(files.as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(dir.path().join("plan/lr.csv")).unwrap();
    assert!(csv.lines().last().unwrap().ends_with(",5.22e-5"));
    ok(&ptk(&["plan-schedule", "--output", "s"], dir.path()));
    assert!(dir.path().join("s/schedule.json").exists());
    ok(&ptk(&["plan-curriculum", "--output", "c"], dir.path()));
    assert!(dir.path().join("c/phases.md").exists());
    let init = ok(&ptk(&["plan-init", "--output", "i"], dir.path()));
    assert_eq!(init.as_array().unwrap().len(), 1);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = ptk(&["plan", "--output", "x", "--seed", "1"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    let o = ptk(&["run", "--input", "nope.jsonl", "--output", "x"], dir.path());
    assert!(!o.status.success());
    fs::write(dir.path().join("bad.toml"), "[schedule]\ntotal_steps = 10\n").unwrap();
    let o = ptk(&["plan", "--config", "bad.toml", "--output", "y"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn simulate_small_sweep() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        "shape = \"proxy-0.05b\"\nvocab_size = 512\nseq_len = 16\nffn = \"linear\"\n[[variant]]\nname = \"baseline\"\n[[variant]]\nname = \"scaled\"\ninit = \"scaled\"\n",
    )
    .unwrap();
    let r = ok(&ptk(&["simulate", "--config", "sweep.toml", "--output", "sim", "--seed", "2"], dir.path()));
    let r = r.as_array().unwrap();
    assert_eq!(r.len(), 2);
    assert!(r[1]["residual_growth"].as_f64().unwrap() < r[0]["residual_growth"].as_f64().unwrap());
    assert!(dir.path().join("sim/trace-scaled.csv").exists());
}
