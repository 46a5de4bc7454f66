//! Matplotlib script emission for simulation traces.

use std::fmt::Write as _;
use std::path::Path;

const PRELUDE: &str = r#"import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {key: [float(row[key]) for row in rows] for key in rows[0]}


def output_path():
    return os.path.splitext(os.path.abspath(__file__))[0] + ".png"

"#;

fn py_str(s: &str) -> String {
    format!("{s:?}")
}

fn script(body: &str) -> String {
    let mut s = String::from(PRELUDE);
    s.push_str(body);
    s.push_str("fig.tight_layout()\nfig.savefig(output_path(), dpi=150)\nprint(output_path())\n");
    s
}

/// States and their estimates against time.
pub fn states(trace: &Path, title: &str, names: &[String]) -> String {
    let mut body = format!("data = load({})\nfig, axes = plt.subplots({}, 1, sharex=True, squeeze=False)\n", py_str(&trace.display().to_string()), names.len());
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(body, "ax = axes[{i}][0]");
        let _ = writeln!(body, "ax.plot(data[\"t\"], data[{0}], label={0})", py_str(n));
        let _ = writeln!(body, "ax.plot(data[\"t\"], data[{0}], \"--\", label={0})", py_str(&format!("{n}_hat")));
        let _ = writeln!(body, "ax.set_ylabel({})\nax.legend(loc=\"upper right\")", py_str(n));
    }
    let _ = writeln!(body, "axes[-1][0].set_xlabel(\"t\")\naxes[0][0].set_title({})", py_str(title));
    script(&body)
}

/// Logarithmic distance to the target with the theoretical bound overlaid.
pub fn distance(trace: &Path, title: &str) -> String {
    let body = format!(
        r#"data = load({path})
fig, ax = plt.subplots()
t = data["t"]
ax.semilogy(t, [d if d > 0 else math.nan for d in data["d"]], label="d(t)")
if any(math.isfinite(b) for b in data["d_bound"]):
    ax.semilogy(t, [b if b > 0 else math.nan for b in data["d_bound"]], "k--", label="bound")
if any(e > 0 for e in data["est_err"]):
    ax.semilogy(t, [e if e > 0 else math.nan for e in data["est_err"]], ":", label="estimation error")
ax.set_xlabel("t")
ax.set_ylabel("distance")
ax.set_title({title})
ax.legend()
"#,
        path = py_str(&trace.display().to_string()),
        title = py_str(title)
    );
    script(&body)
}

/// Noisy and clean measurements of each output channel.
pub fn measurement(trace: &Path, title: &str, outputs: &[(String, String)]) -> String {
    let mut body = format!("data = load({})\nfig, ax = plt.subplots()\n", py_str(&trace.display().to_string()));
    for (noisy, clean) in outputs {
        let _ = writeln!(body, "ax.plot(data[\"t\"], data[{0}], lw=0.5, alpha=0.6, label={0})", py_str(noisy));
        let _ = writeln!(body, "ax.plot(data[\"t\"], data[{0}], lw=1.5, label={0})", py_str(clean));
    }
    let _ = writeln!(body, "ax.set_xlabel(\"t\")\nax.set_title({})\nax.legend()", py_str(title));
    script(&body)
}

/// State norm of several runs on shared axes.
pub fn peaking(traces: &[(String, &Path)], names: &[String]) -> String {
    let keys: Vec<String> = names.iter().map(|n| py_str(n)).collect();
    let mut body = format!("keys = [{}]\nfig, ax = plt.subplots()\n", keys.join(", "));
    for (label, path) in traces {
        let _ = writeln!(body, "data = load({})", py_str(&path.display().to_string()));
        let _ = writeln!(
            body,
            "ax.plot(data[\"t\"], [math.sqrt(sum(data[k][i] ** 2 for k in keys)) for i in range(len(data[\"t\"]))], label={})",
            py_str(label)
        );
    }
    body.push_str("ax.set_xlabel(\"t\")\nax.set_ylabel(\"|x|\")\nax.set_title(\"state norm\")\nax.legend()\n");
    script(&body)
}
