//! Vessel label propagation and Dice evaluation over the seven output
//! substructures.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::VesselGraph;
use crate::matching::MatchResult;
use crate::volume::{Label, LabelVolume, Mask};

/// Paints every candidate voxel with the class of the nearest classified
/// graph edge (path voxels and end nodes, squared mm distance, ties to the
/// lower edge id). Unclassified edges are skipped, so their voxels go to the
/// nearest classified edge; with no classified edge at all the candidates
/// become background. Other voxels keep their code from `chambers`, except
/// pipeline-only codes, which become background.
pub fn assign_vessel_labels(
    candidates: &Mask,
    graph: &VesselGraph,
    matched: &MatchResult,
    chambers: &LabelVolume,
) -> Result<LabelVolume> {
    candidates.check_same_grid(chambers)?;
    if let Some(g) = &graph.grid {
        if g.dims != chambers.dims()
            || g.spacing != chambers.spacing()
            || g.origin != chambers.origin()
        {
            return Err(Error::GridMismatch(
                "graph grid differs from the label grid".into(),
            ));
        }
    }
    if matched.classes.len() != graph.edges.len() {
        return Err(Error::IncompleteMatch(format!(
            "{} classes for {} graph edges",
            matched.classes.len(),
            graph.edges.len()
        )));
    }
    let mut points: Vec<([f64; 3], usize, Label)> = Vec::new();
    for (e, class) in graph.edges.iter().zip(&matched.classes) {
        let Some(label) = class.label() else { continue };
        points.push((graph.nodes[e.source].position, e.id, label));
        points.push((graph.nodes[e.target].position, e.id, label));
        points.extend(e.path.iter().map(|&c| (chambers.position(c), e.id, label)));
    }
    let dims = chambers.dims();
    let out: Vec<Label> = chambers
        .data()
        .par_iter()
        .enumerate()
        .map(|(idx, &l)| {
            if !candidates.data()[idx] {
                return if l.is_output() { l } else { Label::Background };
            }
            let p = chambers.position(dims.coords(idx));
            points
                .iter()
                .map(|(q, id, label)| {
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    (d2, *id, *label)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map_or(Label::Background, |m| m.2)
        })
        .collect();
    LabelVolume::from_data(dims, chambers.spacing(), chambers.origin(), out)
}

/// Dice overlap of `class` between two label volumes on the same grid.
///
/// Two empty masks score 1.0.
pub fn dice(pred: &LabelVolume, truth: &LabelVolume, class: Label) -> Result<f64> {
    pred.check_same_grid(truth)?;
    let (p, t, both) = counts(pred, truth, class);
    Ok(dice_from_counts(p, t, both))
}

fn counts(pred: &LabelVolume, truth: &LabelVolume, class: Label) -> (usize, usize, usize) {
    let mut p = 0;
    let mut t = 0;
    let mut both = 0;
    for (&a, &b) in pred.data().iter().zip(truth.data()) {
        let (x, y) = (a == class, b == class);
        p += x as usize;
        t += y as usize;
        both += (x && y) as usize;
    }
    (p, t, both)
}

fn dice_from_counts(p: usize, t: usize, both: usize) -> f64 {
    if p + t == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + t) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: Label,
    pub dice: f64,
    pub pred_voxels: usize,
    pub truth_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassScore>,
    /// Unweighted mean of the seven class scores.
    pub mean_dice: f64,
}

impl MetricsReport {
    pub fn dice_of(&self, label: Label) -> Option<f64> {
        self.classes
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.dice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>8} {:>12} {:>12}",
            "class", "dice", "pred", "truth"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<6} {:>8.4} {:>12} {:>12}",
                c.label.name(),
                c.dice,
                c.pred_voxels,
                c.truth_voxels
            );
        }
        let _ = writeln!(s, "{:<6} {:>8.4}", "mean", self.mean_dice);
        s
    }
}

/// Per-class Dice for LV, RV, LA, RA, Myo, Ao and PA plus their mean.
pub fn report(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    pred.check_same_grid(truth)?;
    let classes: Vec<ClassScore> = Label::SUBSTRUCTURES
        .iter()
        .map(|&label| {
            let (p, t, both) = counts(pred, truth, label);
            ClassScore {
                label,
                dice: dice_from_counts(p, t, both),
                pred_voxels: p,
                truth_voxels: t,
            }
        })
        .collect();
    let mean_dice = classes.iter().map(|c| c.dice).sum::<f64>() / classes.len() as f64;
    Ok(MetricsReport { classes, mean_dice })
}

/// Mean and sample standard deviation of per-case scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cases: usize,
    /// (label, mean, std) per class.
    pub classes: Vec<(Label, f64, f64)>,
    pub mean_dice: (f64, f64),
}

pub fn summarize(reports: &[MetricsReport]) -> CohortSummary {
    let stats = |xs: Vec<f64>| {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let m = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (m, var.sqrt())
    };
    let classes = Label::SUBSTRUCTURES
        .iter()
        .map(|&l| {
            let (m, s) = stats(reports.iter().filter_map(|r| r.dice_of(l)).collect());
            (l, m, s)
        })
        .collect();
    CohortSummary {
        cases: reports.len(),
        classes,
        mean_dice: stats(reports.iter().map(|r| r.mean_dice).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, VoxelSpacing};

    fn vol(codes: &[u8]) -> LabelVolume {
        LabelVolume::from_codes(
            Dims::new(codes.len(), 1, 1).unwrap(),
            VoxelSpacing::isotropic(1.0).unwrap(),
            [0.0; 3],
            codes,
        )
        .unwrap()
    }

    #[test]
    fn identity_scores_one() {
        let a = vol(&[0, 1, 2, 3, 4, 5, 6, 7, 7]);
        let r = report(&a, &a).unwrap();
        assert!(r.classes.iter().all(|c| c.dice == 1.0));
        assert_eq!(r.mean_dice, 1.0);
    }

    #[test]
    fn disjoint_scores_zero() {
        let a = vol(&[6, 6, 0, 0]);
        let b = vol(&[0, 0, 6, 6]);
        assert_eq!(dice(&a, &b, Label::Ao).unwrap(), 0.0);
    }

    #[test]
    fn half_subset_scores_two_thirds() {
        let t = vol(&[1, 1, 1, 1]);
        let p = vol(&[1, 1, 0, 0]);
        assert_eq!(dice(&p, &t, Label::LV).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn both_empty_scores_one_and_one_empty_zero() {
        let a = vol(&[0, 0]);
        let b = vol(&[7, 0]);
        assert_eq!(dice(&a, &a, Label::PA).unwrap(), 1.0);
        assert_eq!(dice(&a, &b, Label::PA).unwrap(), 0.0);
    }

    #[test]
    fn mean_is_average_of_classes() {
        let a = vol(&[1, 2, 3, 4, 5, 6, 7, 0]);
        let b = vol(&[1, 2, 3, 4, 5, 7, 6, 0]);
        let r = report(&a, &b).unwrap();
        let avg = r.classes.iter().map(|c| c.dice).sum::<f64>() / 7.0;
        assert_eq!(r.mean_dice, avg);
        assert!((r.mean_dice - 5.0 / 7.0).abs() < 1e-12);
        assert!(r.to_table().contains("mean"));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        assert!(dice(&vol(&[0]), &vol(&[0, 0]), Label::LV).is_err());
    }

    #[test]
    fn cohort_statistics() {
        let a = vol(&[1, 1]);
        let b = vol(&[1, 0]);
        let r1 = report(&a, &a).unwrap();
        let r2 = report(&b, &a).unwrap();
        let s = summarize(&[r1, r2]);
        let lv = s.classes[0];
        assert_eq!(lv.0, Label::LV);
        assert!((lv.1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(lv.2 > 0.0);
    }

    mod assign {
        use super::*;
        use crate::graph::{NodeKind, VesselEdge, VesselNode};
        use crate::matching::{Correspondence, CostBreakdown, EdgeClass};
        use crate::phantom::{generate_phantom, PhantomSpec, Variant};

        /// Two 1-voxel-thick rods along x at y = 0 and y = 4 on a 10×5×1 grid.
        fn two_rods() -> (Mask, VesselGraph, LabelVolume) {
            let mut codes = vec![0u8; 50];
            for i in 0..10 {
                for j in 0..5 {
                    codes[j * 10 + i] = 10;
                }
            }
            codes[0] = 1;
            let labels = vol2(&codes);
            let cand = labels.mask_of(Label::VesselCandidate);
            let node = |id: usize, x: f64, y: f64| VesselNode {
                id,
                kind: NodeKind::Endpoint,
                position: [x, y, 0.0],
                radius: 1.0,
                chamber: None,
            };
            let edge = |id: usize, s: usize, t: usize, y: usize| VesselEdge {
                id,
                source: s,
                target: t,
                length: 9.0,
                radius: 1.0,
                direction: [1.0, 0.0, 0.0],
                path: (1..9).map(|i| [i, y, 0]).collect(),
            };
            let g = VesselGraph {
                grid: None,
                nodes: vec![
                    node(0, 0.0, 0.0),
                    node(1, 9.0, 0.0),
                    node(2, 0.0, 4.0),
                    node(3, 9.0, 4.0),
                ],
                edges: vec![edge(0, 0, 1, 0), edge(1, 2, 3, 4)],
            };
            (cand, g, labels)
        }

        fn vol2(codes: &[u8]) -> LabelVolume {
            LabelVolume::from_codes(
                Dims::new(10, 5, 1).unwrap(),
                VoxelSpacing::isotropic(1.0).unwrap(),
                [0.0; 3],
                codes,
            )
            .unwrap()
        }

        fn result(classes: Vec<EdgeClass>) -> MatchResult {
            MatchResult {
                variant: "x".into(),
                template: 0,
                correspondence: Correspondence::empty(4),
                edge_map: vec![None; classes.len()],
                classes,
                cost: CostBreakdown::default(),
            }
        }

        #[test]
        fn nearest_edge_with_ties_to_lower_id() {
            let (cand, g, labels) = two_rods();
            let out = assign_vessel_labels(
                &cand,
                &g,
                &result(vec![EdgeClass::Ao, EdgeClass::PA]),
                &labels,
            )
            .unwrap();
            assert_eq!(out.get(0, 0, 0), Label::LV, "chamber voxels pass through");
            assert_eq!(out.get(5, 1, 0), Label::Ao);
            assert_eq!(out.get(5, 2, 0), Label::Ao, "equidistant goes to edge 0");
            assert_eq!(out.get(5, 3, 0), Label::PA);
            assert!(out.data().iter().all(|l| l.is_output()));
        }

        #[test]
        fn unclassified_falls_back_and_all_ao() {
            let (cand, g, labels) = two_rods();
            let out = assign_vessel_labels(
                &cand,
                &g,
                &result(vec![EdgeClass::Unclassified, EdgeClass::Ao]),
                &labels,
            )
            .unwrap();
            assert_eq!(out.count(Label::Ao), cand.count_true());
            let none = assign_vessel_labels(
                &cand,
                &g,
                &result(vec![EdgeClass::Unclassified; 2]),
                &labels,
            )
            .unwrap();
            assert_eq!(none.count(Label::Background), 49);
        }

        #[test]
        fn empty_candidates_return_chambers() {
            let (_, g, _) = two_rods();
            let mut codes = vec![0u8; 50];
            codes[7] = 2;
            codes[8] = 5;
            let labels = vol2(&codes);
            let out = assign_vessel_labels(
                &labels.mask_of(Label::VesselCandidate),
                &g,
                &result(vec![EdgeClass::Ao; 2]),
                &labels,
            )
            .unwrap();
            assert_eq!(out, labels);
        }

        #[test]
        fn match_must_cover_graph() {
            let (cand, g, labels) = two_rods();
            assert!(matches!(
                assign_vessel_labels(&cand, &g, &result(vec![EdgeClass::Ao]), &labels),
                Err(Error::IncompleteMatch(_))
            ));
        }

        #[test]
        fn trunk_relabeled_as_pa_drops_both_vessels() {
            let truth = generate_phantom(&PhantomSpec::new(Variant::Normal, 3))
                .unwrap()
                .labels;
            // relabel the main part of the aorta (all but the lower descending
            // segment) as PA, the failure mode of a pixel-wise network
            let mut pred = truth.clone();
            let dims = pred.dims();
            for idx in 0..dims.len() {
                let c = dims.coords(idx);
                if pred.data()[idx] == Label::Ao && pred.position(c)[2] > -5.0 {
                    pred.data_mut()[idx] = Label::PA;
                }
            }
            let r = report(&pred, &truth).unwrap();
            assert!(r.dice_of(Label::Ao).unwrap() < 0.5, "{}", r.to_table());
            assert!(r.dice_of(Label::PA).unwrap() < 0.5, "{}", r.to_table());
            for l in [Label::LV, Label::RV, Label::LA, Label::RA, Label::Myo] {
                assert_eq!(r.dice_of(l), Some(1.0));
            }
        }
    }
}
