//! One line per acceptance criterion. Exits nonzero when any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use covbench::verify::{self, Faults, SuiteReport};
use covbench::{output, presets};

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn suite(id: usize, title: &'static str, name: &str, bound: Option<Duration>) -> Line {
    match verify::run_suite(name, Faults::default()) {
        Ok(r) => from_report(id, title, &r, bound),
        Err(e) => Line {
            id,
            title,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn from_report(id: usize, title: &'static str, r: &SuiteReport, bound: Option<Duration>) -> Line {
    let in_time = bound.is_none_or(|b| r.elapsed < b);
    let mut detail = format!("{}/{} checks", r.passed, r.total);
    if let Some(b) = bound {
        detail.push_str(&format!(", {:.3} s (limit {} s)", r.elapsed.as_secs_f64(), b.as_secs()));
    }
    for n in &r.notes {
        detail.push_str("; ");
        detail.push_str(n);
    }
    Line {
        id,
        title,
        pass: r.pass && in_time,
        detail,
    }
}

fn determinism() -> Line {
    let start = Instant::now();
    let result = (|| -> Result<String, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
        let mut checked = 0;
        for name in presets::names() {
            let mut files = Vec::new();
            for run in 0..2 {
                let mut cfg = presets::require(name).map_err(|e| e.to_string())?;
                cfg.output.path = dir.path().join(format!("{name}-{run}.csv"));
                let summary = covbench::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
                files.push(std::fs::read(&summary.output).map_err(|e| e.to_string())?);
            }
            if files[0] != files[1] {
                return Err(format!("{name}: outputs differ between runs"));
            }
            let text = String::from_utf8(files.swap_remove(0)).map_err(|e| e.to_string())?;
            let header = text.lines().next().unwrap_or_default();
            let want = std::fs::read_to_string(golden.join(format!("{name}.header"))).map_err(|e| e.to_string())?;
            if header != want.trim_end() || header != output::columns(3).join(",") {
                return Err(format!("{name}: header {header:?} does not match golden file"));
            }
            checked += 1;
        }
        Ok(format!("{checked} presets byte-identical across two runs, headers match golden files"))
    })();
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok(d) => Line {
            id: 10,
            title: "determinism and schema",
            pass: true,
            detail: format!("{d}, {elapsed:.3} s"),
        },
        Err(e) => Line {
            id: 10,
            title: "determinism and schema",
            pass: false,
            detail: e,
        },
    }
}

fn main() {
    let s = |secs| Some(Duration::from_secs(secs));
    let lines = vec![
        suite(1, "tilt optimality", "tilt", s(5)),
        suite(2, "covariance law order", "covariance-law", s(10)),
        suite(3, "two-mode exactness", "toy", s(1)),
        suite(4, "Fisher identities", "fisher", s(5)),
        suite(5, "clipping robustness", "clipping", s(10)),
        suite(6, "PL condition", "pl", s(20)),
        suite(7, "gradient correctness", "gradients", s(10)),
        suite(8, "MGDA min-norm", "mgda", s(5)),
        suite(9, "interference reproduction", "interference", s(60)),
        determinism(),
        suite(11, "controller unit semantics", "controllers", None),
    ];
    let mut failed = 0;
    for l in &lines {
        println!(
            "criterion {:>2} {:<28} {}  {}",
            l.id,
            l.title,
            if l.pass { "PASS" } else { "FAIL" },
            l.detail
        );
        failed += (!l.pass) as usize;
    }
    println!("{}/{} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
