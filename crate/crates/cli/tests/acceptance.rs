//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use aoitol_core::ingest::{to_canonical_string, DefectObservation, PartDataset, PartKey};
use aoitol_core::optimizer::{optimize_all, optimize_part, SafetyMargin};
use aoitol_core::quantile::{mean, percentile_value, sort_ascending, Percentile};
use aoitol_core::simulate::{
    default_grid, generate_synthetic, sweep, DefectDistribution, FalseCallDistribution, SyntheticSpec,
};
use aoitol_core::validation::{run_validation_protocol, split_defects, train_size, ProtocolConfig, SplitPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_aoitol");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pct(p: f64) -> Percentile {
    Percentile::new(p).unwrap()
}

// ---------------------------------------------------------------------------
// Oracles, written independently of the library.

/// Percentile by the textbook recipe: insertion sort, 1-based rank
/// `p(n-1)/100 + 1`, integer part, fractional part, linear interpolation.
fn oracle_percentile(values: &[f64], p: f64) -> f64 {
    let mut x: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        let mut j = x.len();
        while j > 0 && x[j - 1] > v {
            j -= 1;
        }
        x.insert(j, v);
    }
    let n = x.len();
    let rank = p / 100.0 * (n as f64 - 1.0) + 1.0;
    let i = rank.floor() as usize;
    let d = rank - i as f64;
    let at = |k: usize| x[k - 1];
    if i >= n {
        at(n)
    } else {
        at(i) + d * (at(i + 1) - at(i))
    }
}

fn oracle_flags(value: f64, tolerance: f64) -> bool {
    value < tolerance
}

fn oracle_count_flagged(values: &[f64], tolerance: f64) -> usize {
    values.iter().filter(|&&v| oracle_flags(v, tolerance)).count()
}

// ---------------------------------------------------------------------------
// Criteria.

fn quantile_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0170);
    let vectors = 2000;
    let mut worst = 0.0f64;
    for case in 0..vectors {
        let n = rng.random_range(1..=200);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1e6..=1e6)).collect();
        let p = match case % 10 {
            0 => 0.0,
            1 => 100.0,
            _ => rng.random_range(0.0..=100.0),
        };
        let got = percentile_value(&sort_ascending(&values).unwrap(), pct(p));
        let want = oracle_percentile(&values, p);
        let scale = got.abs().max(want.abs()).max(f64::MIN_POSITIVE);
        let rel = (got - want).abs() / scale;
        worst = worst.max(rel);
        ensure(rel <= 1e-12, || {
            format!("case {case}: n={n} p={p} got {got} want {want}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{vectors} vectors, worst relative error {worst:e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn worked_example() -> Outcome {
    let values = [2.0, 28.0, 35.0, 32.0, 25.0];
    let m = mean(&values).unwrap();
    ensure(m == 24.4, || format!("mean {m}"))?;
    let v = percentile_value(&sort_ascending(&values).unwrap(), pct(80.0));
    ensure((v - 32.6).abs() <= 1e-12, || format!("p80 {v}"))?;
    let oracle = oracle_percentile(&values, 80.0);
    ensure((oracle - 32.6).abs() <= 1e-12, || format!("oracle p80 {oracle}"))?;
    Ok(format!("mean {m}, p80 {v}"))
}

fn split_reproduction() -> Outcome {
    let expected = [(41, 28, 13), (116, 81, 35), (27, 18, 9), (32, 22, 10), (34, 23, 11)];
    let key = PartKey::new("P", "solder");
    for (n, train, holdout) in expected {
        ensure(train_size(n, 0.7) == train, || {
            format!("train_size({n}) = {}", train_size(n, 0.7))
        })?;
        let defects: Vec<DefectObservation> = (0..n).map(|i| DefectObservation::new(i as f64)).collect();
        for policy in [
            SplitPolicy::Shuffled { seed: 1 },
            SplitPolicy::Chronological { fallback_seed: 2 },
        ] {
            let s = split_defects(&key, &defects, 0.7, policy).unwrap();
            ensure(s.train.len() == train && s.holdout.len() == holdout, || {
                format!("n={n}: got ({}, {})", s.train.len(), s.holdout.len())
            })?;
        }
    }
    Ok("(28,13) (81,35) (18,9) (22,10) (23,11)".into())
}

fn safety_spec(seed: u64) -> SyntheticSpec {
    let false_calls = if seed.is_multiple_of(2) {
        FalseCallDistribution::UniformTail { span_fraction: 0.3 }
    } else {
        FalseCallDistribution::TruncatedNormal {
            mean_offset_fraction: 0.1,
            std_dev_fraction: 0.08,
        }
    };
    let defects = match seed % 3 {
        0 => DefectDistribution::Adversarial {
            near_fraction: 0.9999,
            gap_fraction: 0.02,
            spread_fraction: 0.2,
        },
        1 => DefectDistribution::Overlapping,
        _ => DefectDistribution::Separated {
            gap_fraction: 0.0,
            spread_fraction: 0.5,
        },
    };
    SyntheticSpec {
        part_count: 6,
        false_calls_per_part: aoitol_core::simulate::CountRange { min: 5, max: 120 },
        false_calls,
        defects,
        defect_rate: 0.15,
        seed,
        ..SyntheticSpec::default()
    }
}

fn guard_safety() -> Outcome {
    let start = Instant::now();
    let datasets = 600;
    let mut violations = Vec::new();
    let mut guards = 0;
    let mut rows = 0;
    for seed in 0..datasets {
        let data = generate_synthetic(&safety_spec(seed)).map_err(|e| e.to_string())?;
        let p = pct(50.0 + (seed % 50) as f64);

        let batch = optimize_all(&data, p, SafetyMargin::default());
        if !batch.errors.is_empty() {
            violations.push(format!("seed {seed}: optimise errors {:?}", batch.errors));
        }
        for prop in &batch.proposals {
            guards += usize::from(prop.guard.applied);
            for d in data[&prop.key].defect_values() {
                if !oracle_flags(d, prop.final_tolerance) {
                    violations.push(format!(
                        "seed {seed} {}: defect {d} >= {}",
                        prop.key, prop.final_tolerance
                    ));
                }
            }
        }

        let mut config = ProtocolConfig::new(p);
        config.policy = if seed.is_multiple_of(2) {
            SplitPolicy::Shuffled { seed }
        } else {
            SplitPolicy::Chronological { fallback_seed: seed }
        };
        let report = match run_validation_protocol(&data, &config) {
            Ok(r) => r,
            Err(aoitol_core::validation::ValidationError::NoDefectiveParts) => continue,
            Err(e) => return Err(format!("seed {seed}: {e}")),
        };
        if !report.errors.is_empty() || report.training_escapes != 0 {
            violations.push(format!(
                "seed {seed}: {:?} training escapes {}",
                report.errors, report.training_escapes
            ));
        }
        for ((row, split), prop) in report.rows.iter().zip(&report.splits).zip(&report.proposals) {
            rows += 1;
            let train = split.train_values();
            let holdout = split.holdout_values();
            if oracle_count_flagged(&train, prop.final_tolerance) != train.len() {
                violations.push(format!("seed {seed} {}: training defect unflagged", row.key));
            }
            let escaped = holdout.len() - oracle_count_flagged(&holdout, prop.final_tolerance);
            if row.holdout_escaped != escaped || row.holdout_defect_count != holdout.len() {
                violations.push(format!(
                    "seed {seed} {}: escapes {} vs holdout {escaped}",
                    row.key, row.holdout_escaped
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    ensure(guards > 0, || "guard never exercised".into())?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{datasets} datasets, {guards} guard activations, {rows} validation rows, 0 violations, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn sweep_behaviour() -> Outcome {
    let ten = PartDataset::new(PartKey::new("P1", "solder"), 101.0)
        .with_model("M1")
        .with_false_calls((1..=10).map(|i| f64::from(i) * 10.0));
    let proposal = optimize_part(&ten, pct(80.0), SafetyMargin::default()).unwrap();
    ensure((proposal.candidate_tolerance - 82.0).abs() <= 1e-12, || {
        format!("candidate {}", proposal.candidate_tolerance)
    })?;
    let single: BTreeMap<PartKey, PartDataset> = [(ten.key.clone(), ten)].into();
    let point = &sweep(&single, &[pct(80.0)], SafetyMargin::default()).unwrap().points[0];
    ensure(
        point.total_false_calls_after == 8 && point.reduction_fraction == 0.2,
        || {
            format!(
                "after {} reduction {}",
                point.total_false_calls_after, point.reduction_fraction
            )
        },
    )?;

    let seeds = 40;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            part_count: 30,
            seed,
            false_calls: if seed.is_multiple_of(2) {
                FalseCallDistribution::UniformTail { span_fraction: 0.4 }
            } else {
                FalseCallDistribution::TruncatedNormal {
                    mean_offset_fraction: 0.1,
                    std_dev_fraction: 0.05,
                }
            },
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let out = sweep(&data, &default_grid(), SafetyMargin::default()).unwrap();
        ensure(out.points.iter().all(|p| p.guard_activations == 0), || {
            format!("seed {seed}: guard fired")
        })?;
        for w in out.points.windows(2) {
            ensure(w[0].total_false_calls_after <= w[1].total_false_calls_after, || {
                format!("seed {seed}: p={} -> {} not monotone", w[0].p, w[1].p)
            })?;
        }
    }
    Ok(format!(
        "candidate 82, reduction 20%, monotone on {seeds} guard-free seeds"
    ))
}

fn synthetic_reproduction() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    ensure(data.len() == 100, || format!("{} parts", data.len()))?;
    let out = sweep(&data, &[pct(75.0), pct(80.0)], SafetyMargin::default()).unwrap();
    let (p75, p80) = (&out.points[0], &out.points[1]);
    ensure((0.15..=0.22).contains(&p80.reduction_fraction), || {
        format!("p80 reduction {}", p80.reduction_fraction)
    })?;
    ensure(p75.reduction_fraction > p80.reduction_fraction, || {
        format!(
            "p75 {} not above p80 {}",
            p75.reduction_fraction, p80.reduction_fraction
        )
    })?;
    for pt in [p75, p80] {
        ensure(pt.defects_flagged == pt.defects_total && pt.defects_total > 0, || {
            format!(
                "p={}: {}/{} defects flagged",
                pt.p, pt.defects_flagged, pt.defects_total
            )
        })?;
    }
    Ok(format!(
        "seed 42: p80 {:.2}%, p75 {:.2}%, defects retained {}/{}",
        p80.reduction_fraction * 100.0,
        p75.reduction_fraction * 100.0,
        p80.defects_flagged,
        p80.defects_total
    ))
}

fn run_cli(args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn cli_pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let data = dir.join("data.csv");
    let proposals = dir.join("proposals.jsonl");
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let (code, _) = run_cli(&["generate", "--seed", "42", "--out", &s(&data)])?;
    ensure(code == 0, || format!("generate exited {code}"))?;
    let (code, opt_out) = run_cli(&["optimize", "--input", &s(&data), "--out", &s(&proposals)])?;
    ensure(code == 0, || format!("optimize exited {code}"))?;
    let (code, val_out) = run_cli(&["validate", "--input", &s(&data), "--seed", "42"])?;
    ensure(code == 0, || format!("validate exited {code}"))?;
    let text = String::from_utf8_lossy(&val_out);
    let footer = text.lines().last().unwrap_or_default();
    ensure(
        footer.starts_with("overall_recall,") && footer.ends_with(",0,1"),
        || format!("footer {footer}"),
    )?;
    Ok(vec![
        std::fs::read(&data).map_err(|e| e.to_string())?,
        std::fs::read(&proposals).map_err(|e| e.to_string())?,
        opt_out,
        val_out,
    ])
}

fn cli_end_to_end() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = cli_pipeline(a.path())?;
    let second = cli_pipeline(b.path())?;
    let names = ["data.csv", "proposals.jsonl", "optimize stdout", "validate stdout"];
    for ((x, y), name) in first.iter().zip(&second).zip(names) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!("exit 0, recall 1, {} artefacts byte-identical", names.len()))
}

struct Server {
    child: Child,
    port: u16,
}

impl Server {
    fn start() -> Result<Self, String> {
        let mut child = Command::new(BIN)
            .args(["serve", "--port", "0"])
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stdout = child.stdout.take().ok_or("no stdout")?;
        let port = BufReader::new(stdout)
            .lines()
            .map_while(Result::ok)
            .find_map(|l| l.strip_prefix("port ").and_then(|p| p.parse().ok()))
            .ok_or("server did not report a port")?;
        Ok(Self { child, port })
    }

    fn request(&self, method: &str, path: &str, body: &str) -> Result<(u16, Vec<u8>), String> {
        let mut stream = TcpStream::connect(("127.0.0.1", self.port)).map_err(|e| e.to_string())?;
        let head = format!(
            "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            body.len()
        );
        stream.write_all(head.as_bytes()).map_err(|e| e.to_string())?;
        stream.write_all(body.as_bytes()).map_err(|e| e.to_string())?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw).map_err(|e| e.to_string())?;
        let split = raw
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or("malformed response")?;
        let head = String::from_utf8_lossy(&raw[..split]).to_ascii_lowercase();
        let status = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or("no status")?;
        let mut payload = raw[split + 4..].to_vec();
        if head.contains("transfer-encoding: chunked") {
            payload = dechunk(&payload)?;
        }
        Ok((status, payload))
    }

    fn json(&self, method: &str, path: &str, body: Value) -> Result<(u16, Value), String> {
        let (status, bytes) = self.request(method, path, &body.to_string())?;
        Ok((status, serde_json::from_slice(&bytes).unwrap_or(Value::Null)))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn dechunk(mut body: &[u8]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    loop {
        let eol = body.windows(2).position(|w| w == b"\r\n").ok_or("bad chunk")?;
        let size =
            usize::from_str_radix(String::from_utf8_lossy(&body[..eol]).trim(), 16).map_err(|e| e.to_string())?;
        if size == 0 {
            return Ok(out);
        }
        out.extend_from_slice(&body[eol + 2..eol + 2 + size]);
        body = &body[eol + 4 + size..];
    }
}

fn service_reproducibility() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec {
        part_count: 12,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let csv = to_canonical_string(data.values());
    let run_body = |version: &Value| {
        json!({
            "dataset_version": version,
            "percentile": 77.5,
            "margin": {"relative": 0.015},
            "split_policy": {"kind": "shuffled", "seed": 5}
        })
    };

    let mut bodies = Vec::new();
    let mut primary = None;
    for _ in 0..2 {
        let server = Server::start()?;
        let (status, version) = server.request("POST", "/datasets", &csv)?;
        ensure(status == 201, || format!("upload {status}"))?;
        let version: Value = serde_json::from_slice(&version).map_err(|e| e.to_string())?;
        let version = version["version_id"].clone();
        let (status, created) = server.json("POST", "/runs", run_body(&version))?;
        ensure(status == 201, || format!("run {status}"))?;
        let (status, again) = server.json("POST", "/runs", run_body(&version))?;
        ensure(status == 200 && again["run_id"] == created["run_id"], || {
            "re-post changed run".into()
        })?;
        let run_id = created["run_id"].as_str().unwrap_or_default().to_owned();
        let (status, body) = server.request("GET", &format!("/runs/{run_id}"), "")?;
        ensure(status == 200, || format!("get run {status}"))?;
        bodies.push(body.clone());
        primary = Some((server, version, body));
    }
    ensure(bodies[0] == bodies[1], || "run results differ between instances".into())?;

    let (server, version, body) = primary.unwrap();
    let run: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    let proposals = run["proposals"].as_array().ok_or("no proposals")?;
    let decide = |i: usize, decision: &str| {
        let id = proposals[i]["proposal_id"].as_str().unwrap_or_default();
        server.json(
            "POST",
            &format!("/proposals/{id}/decision"),
            json!({"decision": decision, "decided_by": "acceptance"}),
        )
    };
    let mut approved = BTreeSet::new();
    for (i, decision) in [
        (0, "approved"),
        (1, "rejected"),
        (2, "approved"),
        (5, "approved"),
        (6, "rejected"),
    ] {
        let (status, _) = decide(i, decision)?;
        ensure(status == 201, || format!("decision {i} -> {status}"))?;
        if decision == "approved" {
            let p = &proposals[i]["proposal"];
            approved.insert(format!(
                "{},{},{}",
                p["key"]["part_number"].as_str().unwrap_or_default(),
                p["key"]["inspection_type"].as_str().unwrap_or_default(),
                p["final_tolerance"].as_f64().unwrap_or(f64::NAN)
            ));
        }
    }
    let (status, _) = decide(0, "rejected")?;
    ensure(status == 409, || format!("second decision -> {status}"))?;

    let version = version.as_str().unwrap_or_default();
    let (status, export) = server.request("GET", &format!("/export/tolerances?version={version}"), "")?;
    ensure(status == 200, || format!("export {status}"))?;
    let export = String::from_utf8_lossy(&export).into_owned();
    let mut lines = export.lines();
    ensure(
        lines.next() == Some("part_number,inspection_type,final_tolerance"),
        || "export header".into(),
    )?;
    let exported: BTreeSet<String> = lines.map(str::to_owned).collect();
    ensure(exported == approved, || {
        format!("export {exported:?} vs approved {approved:?}")
    })?;
    Ok(format!(
        "byte-identical run across 2 instances, second decision 409, export = {} approved rows",
        approved.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("quantile oracle equivalence", quantile_oracle_equivalence),
        ("worked example mean and p80", worked_example),
        ("split size reproduction", split_reproduction),
        ("guard safety property", guard_safety),
        ("sweep behaviour", sweep_behaviour),
        ("synthetic reduction at p80 and p75", synthetic_reproduction),
        ("cli generate, optimize, validate", cli_end_to_end),
        ("service reproducibility and decisions", service_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
