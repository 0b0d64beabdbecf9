//! Machine-readable run records and the report assembled from them.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use stvg::data::SplitName;
use stvg::experiment::{render_comparison, render_ladder, AblationRow, ComparisonRow, DetectorComparison, VerbAttention};
use stvg::language::AttentionTable;
use stvg::metrics::EvalReport;
use stvg::model::Variant;

use crate::manifest::read_manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunRecord {
    Eval(EvalRecord),
    Ablate(AblateRecord),
    AttnStats(AttnRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub split: SplitName,
    pub dataset_sha256: String,
    /// One over the mean candidate count of the split.
    pub random_baseline: Option<f64>,
    pub report: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateRecord {
    pub variant: Variant,
    pub seed: u64,
    pub split: SplitName,
    pub dataset_sha256: String,
    pub ladder: bool,
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnRecord {
    pub variant: Variant,
    pub seed: u64,
    pub split: SplitName,
    pub dataset_sha256: String,
    pub table: AttentionTable,
    pub verb_attention: VerbAttention,
}

/// Records referenced by the eval, ablate and attn-stats manifests in `dir`,
/// in file-name order.
pub fn collect_records(dir: &Path) -> anyhow::Result<Vec<(String, RunRecord)>> {
    let mut manifests: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    manifests.sort();
    let mut out = Vec::new();
    for m in manifests {
        let manifest = read_manifest(&m)?;
        if !matches!(manifest.command.as_str(), "eval" | "ablate" | "attn-stats") {
            continue;
        }
        for (path, hash) in &manifest.outputs {
            if !path.ends_with(".json") {
                continue;
            }
            // Fall back to the manifest's directory when the run tree was moved.
            let mut path = Path::new(path).to_path_buf();
            if !path.exists() {
                path = m.with_file_name(path.file_name().unwrap_or_default());
            }
            let path = path.as_path();
            anyhow::ensure!(
                crate::manifest::sha256_file(path)? == *hash,
                "{} changed since {} was written",
                path.display(),
                m.display()
            );
            let text = std::fs::read_to_string(path)?;
            let record: RunRecord =
                serde_json::from_str(&text).with_context(|| format!("parsing run record {}", path.display()))?;
            let label = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            out.push((label, record));
        }
    }
    Ok(out)
}

fn row_order(name: &str) -> (usize, String) {
    let rank = match name {
        "random" => 0,
        other => Variant::ALL.iter().position(|v| v.name() == other).map_or(Variant::ALL.len() + 1, |p| p + 1),
    };
    (rank, name.to_string())
}

/// Comparison rows (random first, then variants in table order) and the
/// text report. Only depends on record contents, so equal runs give equal bytes.
pub fn assemble(records: &[(String, RunRecord)]) -> (Vec<ComparisonRow>, String) {
    let mut by_name: BTreeMap<(usize, String), BTreeMap<u64, f64>> = BTreeMap::new();
    let mut random: BTreeMap<u64, f64> = BTreeMap::new();
    for (_, r) in records {
        if let RunRecord::Eval(e) = r {
            // Unlabeled prediction files share the seed-0 column.
            let seed = e.seed.unwrap_or(0);
            by_name.entry(row_order(&e.name)).or_default().insert(seed, e.report.headline());
            if let Some(b) = e.random_baseline {
                random.insert(seed, b);
            }
        }
    }
    if !random.is_empty() {
        by_name.insert(row_order("random"), random);
    }
    let rows: Vec<ComparisonRow> = by_name
        .into_iter()
        .map(|((_, name), accs)| ComparisonRow {
            name,
            seeds: accs.keys().copied().collect(),
            accuracies: accs.values().copied().collect(),
        })
        .collect();

    let mut text = String::from("== accuracy (%) on ground-truth candidates ==\n");
    text.push_str(&render_comparison(&rows));
    for (_, r) in records {
        if let RunRecord::Eval(EvalRecord {
            name,
            seed,
            detector: Some(d),
            ..
        }) = r
        {
            text.push_str(&format!(
                "\n== tubelet-IoU@0.5 (%), {name} seed {}: ground truth {:.2}, detector-style {:.2} (jitter {}, drop {}) ==\n",
                seed.unwrap_or(0),
                100.0 * d.ground_truth.headline(),
                100.0 * d.detected.headline(),
                d.perturbation.jitter,
                d.perturbation.drop_rate,
            ));
        }
    }
    for (_, r) in records {
        if let RunRecord::Ablate(a) = r {
            let kind = if a.ladder { "ablation ladder" } else { "ablation" };
            text.push_str(&format!("\n== {kind}, {} seed {} ({}) ==\n", a.variant, a.seed, a.split));
            text.push_str(&render_ladder(&a.rows));
        }
    }
    for (_, r) in records {
        if let RunRecord::AttnStats(a) = r {
            text.push_str(&format!("\n== verb attention, {} seed {} ({}) ==\n", a.variant, a.seed, a.split));
            for p in &a.verb_attention.pairs {
                text.push_str(&format!(
                    "{:<11} {:.4}  vs  {:<4} {:.4}\n",
                    p.motion.name(),
                    p.motion_attention,
                    p.appearance.name(),
                    p.appearance_attention
                ));
            }
            text.push_str(&format!(
                "total motion {:.4} vs appearance {:.4}\n",
                a.verb_attention.motion_total, a.verb_attention.appearance_total
            ));
        }
    }
    (rows, text)
}
