//! Emit a matplotlib script next to a finished run's CSV output. The
//! script is self-contained (stdlib csv + matplotlib) so the figures can
//! be regenerated without this crate.

use std::path::{Path, PathBuf};

use crate::{Error, Result};

fn csv_has_rows(path: &Path) -> Result<bool> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(rdr.records().next().is_some())
}

/// Write `plot.py` into `run_dir` and return its path. Refuses to emit a
/// script pointing at missing or empty data.
pub fn emit_plot_script(run_dir: &Path) -> Result<PathBuf> {
    let summary_path = run_dir.join("summary.json");
    let summary_text = std::fs::read_to_string(&summary_path)
        .map_err(|_| Error::MissingData(summary_path.clone()))?;
    let summary: serde_json::Value = serde_json::from_str(&summary_text)
        .map_err(|e| Error::invalid(format!("bad summary.json: {e}")))?;
    let experiment = summary
        .get("experiment")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::invalid("summary.json lacks an experiment name"))?
        .to_string();

    let main_csv = match experiment.as_str() {
        "fig1-bimodal" | "purify-demo" => "trials.csv",
        "theorem-verify" => "bounds.csv",
        "train-denoiser" => "probe.csv",
        _ => "sweep.csv",
    };
    let csv_path = run_dir.join(main_csv);
    if !csv_path.exists() || !csv_has_rows(&csv_path)? {
        return Err(Error::MissingData(csv_path));
    }

    let body = match experiment.as_str() {
        "fig1-bimodal" => FIG1_BODY,
        "theorem-verify" => BOUNDS_BODY,
        "train-denoiser" => PROBE_BODY,
        "purify-demo" => DEMO_BODY,
        _ => SWEEP_BODY,
    };
    let script = format!(
        "#!/usr/bin/env python3\n\
         # Auto-generated; re-run from inside the run directory.\n\
         import csv\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n\
         import matplotlib.pyplot as plt\n\n\
         EXPERIMENT = {experiment:?}\n\
         MAIN_CSV = {main_csv:?}\n\n\
         def rows(path):\n\
         \x20   with open(path) as f:\n\
         \x20       return list(csv.DictReader(f))\n\n\
         {body}"
    );
    let out = run_dir.join("plot.py");
    std::fs::write(&out, script)?;
    Ok(out)
}

const FIG1_BODY: &str = r#"traj = rows("trajectory.csv")
fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
for ax, arm in zip(axes, ["uncorrected", "corrected"]):
    for phase, color in [("forward", "red"), ("reverse", "pink")]:
        pts = [(float(r["t"]), float(r["x"])) for r in traj
               if r["arm"] == arm and r["phase"] == phase]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                color=color, marker="o", markersize=3, label=phase)
    flips = [r for r in rows(MAIN_CSV) if r["arm"] == arm]
    rate = sum(r["flipped"] == "true" for r in flips) / max(len(flips), 1)
    ax.set_title(f"{arm} (flip rate {rate:.3f})")
    ax.set_xscale("symlog", linthresh=0.01)
    ax.set_xlabel("t")
    ax.legend()
axes[0].set_ylabel("x")
fig.tight_layout()
fig.savefig("fig1.png", dpi=150)
print("wrote fig1.png")
"#;

const SWEEP_BODY: &str = r#"data = rows(MAIN_CSV)
fig, ax = plt.subplots(figsize=(6, 4))
arms = sorted({r["arm"] for r in data})
for arm in arms:
    pts = [(float(r["knob"]), float(r["robust_accuracy"]),
            float(r["ci_low"]), float(r["ci_high"]))
           for r in data if r["arm"] == arm]
    pts.sort()
    xs = [p[0] for p in pts]
    ax.plot(xs, [p[1] for p in pts], marker="o", label=arm)
    ax.fill_between(xs, [p[2] for p in pts], [p[3] for p in pts], alpha=0.2)
ax.set_xlabel("knob value")
ax.set_ylabel("robust accuracy")
ax.set_title(EXPERIMENT)
ax.legend()
fig.tight_layout()
fig.savefig("sweep.png", dpi=150)
print("wrote sweep.png")
"#;

const BOUNDS_BODY: &str = r#"data = rows(MAIN_CSV)
fig, ax = plt.subplots(figsize=(6, 4))
labels = [r["quantity"] for r in data]
ax.bar(range(len(data)), [float(r["empirical"]) for r in data],
       color=["tab:green" if r["pass"] == "true" else "tab:red" for r in data])
ax.plot(range(len(data)), [float(r["target"]) for r in data],
        "k_", markersize=20, label="target")
ax.set_xticks(range(len(data)))
ax.set_xticklabels(labels, rotation=20, ha="right")
ax.set_title(EXPERIMENT)
ax.legend()
fig.tight_layout()
fig.savefig("bounds.png", dpi=150)
print("wrote bounds.png")
"#;

const PROBE_BODY: &str = r#"data = rows(MAIN_CSV)
sigmas = sorted({float(r["sigma"]) for r in data})
fig, ax = plt.subplots(figsize=(6, 4))
for sigma in sigmas[::2]:
    pts = sorted((float(r["x"]), float(r["exact"]), float(r["learned"]))
                 for r in data if float(r["sigma"]) == sigma)
    ax.plot([p[0] for p in pts], [p[1] for p in pts], "-", label=f"exact s={sigma}")
    ax.plot([p[0] for p in pts], [p[2] for p in pts], "--")
ax.set_xlabel("x")
ax.set_ylabel("denoised")
ax.set_title(EXPERIMENT)
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig("probe.png", dpi=150)
print("wrote probe.png")
"#;

const DEMO_BODY: &str = r#"data = rows(MAIN_CSV)
fig, ax = plt.subplots(figsize=(6, 4))
ax.hist([float(r["l2_moved"]) for r in data], bins=30)
ax.set_xlabel("l2 distance moved")
ax.set_ylabel("count")
rate = sum(r["recovered"] == "true" for r in data) / max(len(data), 1)
ax.set_title(f"{EXPERIMENT} (recovery {rate:.3f})")
fig.tight_layout()
fig.savefig("demo.png", dpi=150)
print("wrote demo.png")
"#;
