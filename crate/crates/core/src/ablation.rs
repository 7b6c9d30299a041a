//! Mask-family ablation: the same run repeated with each family disabled.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{BBoxTrajectory, LatentGrid};
use crate::maskgen::{AblationFlags, MaskFamily};
use crate::pipeline::{run, PipelineConfig, PromptSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCross,
    NoSpatial,
    NoTemporal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoCross, Variant::NoSpatial, Variant::NoTemporal];

    pub fn flags(self) -> AblationFlags {
        match self {
            Variant::Full => AblationFlags::ALL_ON,
            Variant::NoCross => AblationFlags::ALL_ON.without(MaskFamily::Cross),
            Variant::NoSpatial => AblationFlags::ALL_ON.without(MaskFamily::Spatial),
            Variant::NoTemporal => AblationFlags::ALL_ON.without(MaskFamily::Temporal),
        }
    }

    pub fn disabled(self) -> Option<MaskFamily> {
        match self {
            Variant::Full => None,
            Variant::NoCross => Some(MaskFamily::Cross),
            Variant::NoSpatial => Some(MaskFamily::Spatial),
            Variant::NoTemporal => Some(MaskFamily::Temporal),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCross => "-cross",
            Variant::NoSpatial => "-spatial",
            Variant::NoTemporal => "-temporal",
        }
    }
}

/// Largest masked-step leakage per family; `None` when not measured or the
/// layer does not exist in the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyLeakage {
    pub cross: Option<f64>,
    pub spatial: Option<f64>,
    pub temporal: Option<f64>,
}

impl FamilyLeakage {
    pub fn get(&self, family: MaskFamily) -> Option<f64> {
        match family {
            MaskFamily::Cross => self.cross,
            MaskFamily::Spatial => self.spatial,
            MaskFamily::Temporal => self.temporal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub ablation: AblationFlags,
    pub leakage: FamilyLeakage,
    pub localization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub frozen_steps: usize,
    pub rows: Vec<AblationRow>,
}

pub fn run_ablation(
    traj: &BBoxTrajectory,
    prompt: &PromptSpec,
    cfg: &PipelineConfig,
    grid: LatentGrid,
) -> Result<AblationReport> {
    let rows = Variant::ALL
        .iter()
        .map(|&variant| {
            let out = run(traj, prompt, cfg, grid, variant.flags())?;
            let r = &out.report;
            Ok(AblationRow {
                variant,
                ablation: variant.flags(),
                leakage: FamilyLeakage {
                    cross: r.masked_leakage(MaskFamily::Cross),
                    spatial: r.masked_leakage(MaskFamily::Spatial),
                    temporal: r.masked_leakage(MaskFamily::Temporal),
                },
                localization: r.localization(&out.masks),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { seed: cfg.seed, frozen_steps: cfg.frozen_steps, rows })
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Every measured family leaks at most `tol` in the full row and more
    /// than `tol` exactly where that family was disabled.
    pub fn leakage_isolated(&self, tol: f64) -> bool {
        self.rows.iter().all(|row| {
            MaskFamily::ALL.iter().all(|&fam| match row.leakage.get(fam) {
                None => true,
                Some(v) if row.variant.disabled() == Some(fam) => v > tol,
                Some(v) => v <= tol,
            })
        })
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3e}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}  {:>10}  {:>10}  {:>10}  {:>8}", "variant", "cross", "spatial", "temporal", "fg_frac");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10}  {:>10}  {:>10}  {:>10}  {:>8.4}",
                r.variant.label(),
                fmt(r.leakage.cross),
                fmt(r.leakage.spatial),
                fmt(r.leakage.temporal),
                r.localization
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
