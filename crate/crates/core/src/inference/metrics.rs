//! Bad-pixel error rates over the whole ground truth and its non-occluded part.
//!
//! A pixel is bad when `|pred - gt| > threshold`, plain absolute difference.
//! Pixels without a prediction count as bad.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{read_disparity_png, DisparityMap};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f32; 3] = [2.0, 3.0, 5.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    NonOcc,
    All,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::NonOcc => "Non-Occ",
            Subset::All => "All",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(bad, counted)` over GT-valid pixels inside `mask` (all pixels if `None`).
pub fn bad_pixels(
    pred: &DisparityMap,
    gt: &DisparityMap,
    mask: Option<&[bool]>,
    threshold: f32,
) -> Result<(usize, usize)> {
    if (pred.rows, pred.cols) != (gt.rows, gt.cols) {
        let axis = if pred.rows != gt.rows { "rows" } else { "cols" };
        let (e, f) = if pred.rows != gt.rows {
            (gt.rows, pred.rows)
        } else {
            (gt.cols, pred.cols)
        };
        return Err(Error::shape("pixel_error", axis, e, f));
    }
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::shape("pixel_error", "mask", gt.len(), m.len()));
        }
    }
    let mut bad = 0;
    let mut count = 0;
    for k in 0..gt.len() {
        if !gt.valid[k] || mask.is_some_and(|m| !m[k]) {
            continue;
        }
        count += 1;
        if !pred.valid[k] || (pred.values[k] - gt.values[k]).abs() > threshold {
            bad += 1;
        }
    }
    Ok((bad, count))
}

/// Percentage of bad pixels; errors when no pixel is counted.
pub fn pixel_error(pred: &DisparityMap, gt: &DisparityMap, mask: Option<&[bool]>, threshold: f32) -> Result<f64> {
    match bad_pixels(pred, gt, mask, threshold)? {
        (_, 0) => Err(Error::NoGroundTruth),
        (bad, count) => Ok(percent(bad, count)),
    }
}

fn percent(bad: usize, count: usize) -> f64 {
    100.0 * bad as f64 / count as f64
}

/// One image to score. `noc` marks non-occluded pixels.
#[derive(Clone, Debug)]
pub struct EvalInput {
    pub id: String,
    pub pred: DisparityMap,
    pub gt: DisparityMap,
    pub noc: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub image: String,
    pub threshold: f32,
    pub subset: Subset,
    pub bad: usize,
    pub px_count: usize,
    /// `None` when the image has no pixel in the subset.
    pub error_pct: Option<f64>,
}

/// Per-image rows followed by one pixel-weighted `aggregate` row set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds: Vec<f32>,
    pub subsets: Vec<Subset>,
    pub images: Vec<String>,
    pub records: Vec<MetricRecord>,
}

pub const AGGREGATE: &str = "aggregate";

impl MetricsReport {
    pub fn get(&self, image: &str, threshold: f32, subset: Subset) -> Option<&MetricRecord> {
        self.records
            .iter()
            .find(|r| r.image == image && r.threshold == threshold && r.subset == subset)
    }

    pub fn aggregate(&self, threshold: f32, subset: Subset) -> Option<&MetricRecord> {
        self.get(AGGREGATE, threshold, subset)
    }

    /// Aligned table: one row per image, one column per threshold and subset.
    pub fn to_table(&self) -> String {
        let columns: Vec<(f32, Subset)> = self
            .thresholds
            .iter()
            .flat_map(|&t| self.subsets.iter().map(move |&s| (t, s)))
            .collect();
        let headers: Vec<String> = columns.iter().map(|(t, s)| format!(">{t}px {s}")).collect();
        let width0 = self
            .images
            .iter()
            .map(String::len)
            .chain([AGGREGATE.len(), 5])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width0$}", "image");
        for h in &headers {
            let _ = write!(out, "  {h:>12}");
        }
        out.push('\n');
        for image in self.images.iter().map(String::as_str).chain([AGGREGATE]) {
            let _ = write!(out, "{image:<width0$}");
            for &(t, s) in &columns {
                let cell = match self.get(image, t, s).and_then(|r| r.error_pct) {
                    Some(p) => format!("{p:.2}"),
                    None => "n/a".into(),
                };
                let _ = write!(out, "  {cell:>12}");
            }
            out.push('\n');
        }
        out
    }

    /// `image,threshold,subset,error_pct,px_count` lines with a header.
    pub fn to_records(&self) -> String {
        let mut out = String::from("image,threshold,subset,error_pct,px_count\n");
        for r in &self.records {
            let pct = r.error_pct.map(|p| format!("{p:.4}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.image, r.threshold, r.subset, pct, r.px_count);
        }
        out
    }
}

/// Scores every input; images are processed in parallel.
pub fn evaluate(inputs: &[EvalInput], thresholds: &[f32]) -> Result<MetricsReport> {
    if thresholds.is_empty() {
        return Err(Error::Config("no error thresholds given".into()));
    }
    let mut subsets = Vec::new();
    if inputs.iter().any(|x| x.noc.is_some()) {
        subsets.push(Subset::NonOcc);
    }
    subsets.push(Subset::All);

    let per_image = inputs
        .par_iter()
        .map(|x| {
            let mut recs = Vec::new();
            for &t in thresholds {
                for &s in &subsets {
                    let mask = match s {
                        Subset::All => None,
                        Subset::NonOcc => match &x.noc {
                            Some(m) => Some(m.as_slice()),
                            None => continue,
                        },
                    };
                    let (bad, px_count) = bad_pixels(&x.pred, &x.gt, mask, t)?;
                    recs.push(MetricRecord {
                        image: x.id.clone(),
                        threshold: t,
                        subset: s,
                        bad,
                        px_count,
                        error_pct: (px_count > 0).then(|| percent(bad, px_count)),
                    });
                }
            }
            Ok(recs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<MetricRecord> = per_image.into_iter().flatten().collect();

    for &t in thresholds {
        for &s in &subsets {
            let (bad, px_count) = records
                .iter()
                .filter(|r| r.threshold == t && r.subset == s)
                .fold((0, 0), |(b, c), r| (b + r.bad, c + r.px_count));
            if px_count == 0 {
                return Err(Error::NoGroundTruth);
            }
            records.push(MetricRecord {
                image: AGGREGATE.into(),
                threshold: t,
                subset: s,
                bad,
                px_count,
                error_pct: Some(percent(bad, px_count)),
            });
        }
    }
    Ok(MetricsReport {
        thresholds: thresholds.to_vec(),
        subsets,
        images: inputs.iter().map(|x| x.id.clone()).collect(),
        records,
    })
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".png") && entry.path().is_file() {
            names.insert(name);
        }
    }
    Ok(names)
}

/// Result of scoring a prediction directory.
#[derive(Clone, Debug)]
pub struct DirEvaluation {
    pub report: MetricsReport,
    /// File names present on only one side (or lacking a non-occluded map); excluded from the report.
    pub missing: Vec<String>,
}

/// Pairs `pred_dir` and `gt_dir` PNGs by file name. `noc_dir`, when given,
/// holds ground truth restricted to non-occluded pixels under the same names.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    noc_dir: Option<&Path>,
    thresholds: &[f32],
) -> Result<DirEvaluation> {
    let preds = png_names(pred_dir)?;
    let gts = png_names(gt_dir)?;
    let nocs = noc_dir.map(png_names).transpose()?;
    let mut missing: Vec<String> = preds.symmetric_difference(&gts).cloned().collect();
    let mut paired = Vec::new();
    for name in preds.intersection(&gts) {
        match &nocs {
            Some(n) if !n.contains(name) => missing.push(name.clone()),
            _ => paired.push(name.clone()),
        }
    }
    missing.sort();

    let inputs = paired
        .par_iter()
        .map(|name| {
            let pred = read_disparity_png(&pred_dir.join(name))?;
            let gt = read_disparity_png(&gt_dir.join(name))?;
            let noc = match noc_dir {
                Some(d) => {
                    let m = read_disparity_png(&d.join(name))?;
                    if (m.rows, m.cols) != (gt.rows, gt.cols) {
                        return Err(Error::Format(format!(
                            "{}: size differs from ground truth",
                            d.join(name).display()
                        )));
                    }
                    Some(m.valid)
                }
                None => None,
            };
            let id = name.trim_end_matches(".png").to_string();
            Ok(EvalInput { id, pred, gt, noc })
        })
        .collect::<Result<Vec<_>>>()?;
    if inputs.is_empty() {
        return Err(Error::Config(format!(
            "no prediction/ground-truth pairs between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    Ok(DirEvaluation {
        report: evaluate(&inputs, thresholds)?,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::write_disparity_png;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(values: &[f32], valid: &[bool], cols: usize) -> DisparityMap {
        DisparityMap {
            rows: values.len() / cols,
            cols,
            values: values.to_vec(),
            valid: valid.to_vec(),
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = DisparityMap::dense(2, 3, vec![0.0, 1.5, 3.0, 7.0, 2.0, 9.25]);
        for t in DEFAULT_THRESHOLDS {
            assert_eq!(pixel_error(&gt, &gt, None, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn hand_counted_four_pixels() {
        let gt = DisparityMap::dense(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let pred = DisparityMap::dense(1, 4, vec![1.0, 2.0, 3.0, 8.0]);
        assert_eq!(pixel_error(&pred, &gt, None, 3.0).unwrap(), 25.0);
        assert_eq!(pixel_error(&pred, &gt, None, 5.0).unwrap(), 0.0);
        // exactly at the threshold is not an error
        assert_eq!(pixel_error(&pred, &gt, None, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_denominator_is_an_error() {
        let gt = DisparityMap::invalid(2, 2);
        assert!(matches!(pixel_error(&gt, &gt, None, 3.0), Err(Error::NoGroundTruth)));
        let gt = DisparityMap::dense(1, 2, vec![1.0, 2.0]);
        assert!(matches!(
            pixel_error(&gt, &gt, Some(&[false, false]), 3.0),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = DisparityMap::dense(2, 2, vec![0.0; 4]);
        let b = DisparityMap::dense(2, 3, vec![0.0; 6]);
        assert!(pixel_error(&a, &b, None, 3.0).is_err());
        assert!(pixel_error(&a, &a, Some(&[true]), 3.0).is_err());
    }

    #[test]
    fn missing_prediction_counts_as_bad() {
        let gt = DisparityMap::dense(1, 2, vec![1.0, 2.0]);
        let pred = map(&[1.0, 2.0], &[true, false], 2);
        assert_eq!(pixel_error(&pred, &gt, None, 3.0).unwrap(), 50.0);
    }

    #[test]
    fn random_maps_match_direct_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let gt_v: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let gt_ok: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let pr_v: Vec<f32> = (0..n).map(|_| rng.random_range(0..60) as f32).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let gt = map(&gt_v, &gt_ok, 40);
        let pred = DisparityMap::dense(25, 40, pr_v.clone());
        for t in [1.0f32, 2.0, 3.0, 5.0] {
            let mut bad = 0;
            let mut count = 0;
            for k in 0..n {
                if gt_ok[k] && mask[k] {
                    count += 1;
                    if (pr_v[k] - gt_v[k]).abs() > t {
                        bad += 1;
                    }
                }
            }
            let want = 100.0 * bad as f64 / count as f64;
            assert_eq!(pixel_error(&pred, &gt, Some(&mask), t).unwrap(), want);
        }
    }

    fn input(id: &str, pred: &[f32], gt: &[f32], noc: &[bool]) -> EvalInput {
        EvalInput {
            id: id.into(),
            pred: DisparityMap::dense(1, pred.len(), pred.to_vec()),
            gt: DisparityMap::dense(1, gt.len(), gt.to_vec()),
            noc: Some(noc.to_vec()),
        }
    }

    #[test]
    fn single_perfect_image_gives_zero_table() {
        let x = input("a", &[1.0, 2.0], &[1.0, 2.0], &[true, false]);
        let rep = evaluate(&[x], &DEFAULT_THRESHOLDS).unwrap();
        assert!(rep.records.iter().all(|r| r.error_pct == Some(0.0)));
        assert_eq!(rep.records.len(), 2 * 3 * 2);
    }

    #[test]
    fn aggregate_is_pixel_weighted() {
        // a: 1 of 4 bad at >3; b: 3 of 6 bad at >3
        let a = input("a", &[0.0, 0.0, 0.0, 10.0], &[0.0, 0.0, 0.0, 0.0], &[true; 4]);
        let b = input(
            "b",
            &[5.0, 5.0, 5.0, 0.0, 0.0, 0.0],
            &[0.0; 6],
            &[true, true, false, false, false, false],
        );
        let rep = evaluate(&[a, b], &DEFAULT_THRESHOLDS).unwrap();
        let agg = rep.aggregate(3.0, Subset::All).unwrap();
        assert_eq!((agg.bad, agg.px_count), (4, 10));
        assert_eq!(agg.error_pct, Some(40.0));
        // mean of per-image percentages would be 37.5
        let noc = rep.aggregate(3.0, Subset::NonOcc).unwrap();
        assert_eq!((noc.bad, noc.px_count), (3, 6));
        assert_eq!(rep.aggregate(5.0, Subset::All).unwrap().error_pct, Some(10.0));
        for id in ["a", "b"] {
            for t in DEFAULT_THRESHOLDS {
                let n = rep.get(id, t, Subset::NonOcc).unwrap().px_count;
                assert!(n <= rep.get(id, t, Subset::All).unwrap().px_count);
            }
        }
        let table = rep.to_table();
        assert!(table.lines().next().unwrap().contains(">3px Non-Occ"));
        assert!(table.contains("aggregate"));
        let recs = rep.to_records();
        assert!(recs.starts_with("image,threshold,subset,error_pct,px_count\n"));
        assert!(recs.contains("aggregate,3,All,40.0000,10\n"));
    }

    #[test]
    fn image_without_subset_pixels_shows_na() {
        let a = input("a", &[0.0, 9.0], &[0.0, 0.0], &[false, false]);
        let b = input("b", &[0.0, 9.0], &[0.0, 0.0], &[true, false]);
        let rep = evaluate(&[a, b], &[3.0]).unwrap();
        assert_eq!(rep.get("a", 3.0, Subset::NonOcc).unwrap().error_pct, None);
        assert!(rep.to_table().contains("n/a"));
    }

    #[test]
    fn directories_pair_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g, n) = (dir.path().join("pred"), dir.path().join("gt"), dir.path().join("noc"));
        for d in [&p, &g, &n] {
            std::fs::create_dir(d).unwrap();
        }
        let gt = DisparityMap::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let pred = DisparityMap::dense(2, 2, vec![1.0, 2.0, 3.0, 9.0]);
        for name in ["000000_10.png", "000001_10.png"] {
            write_disparity_png(&gt, &g.join(name)).unwrap();
            write_disparity_png(&gt.masked(&[true, true, false, false]), &n.join(name)).unwrap();
        }
        write_disparity_png(&pred, &p.join("000000_10.png")).unwrap();
        write_disparity_png(&pred, &p.join("000007_10.png")).unwrap();
        let out = evaluate_dirs(&p, &g, Some(&n), &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(out.missing, vec!["000001_10.png", "000007_10.png"]);
        assert_eq!(out.report.images, vec!["000000_10"]);
        assert_eq!(out.report.aggregate(3.0, Subset::All).unwrap().error_pct, Some(25.0));
        assert_eq!(out.report.aggregate(3.0, Subset::NonOcc).unwrap().error_pct, Some(0.0));
    }

    proptest! {
        #[test]
        fn error_is_monotone_in_threshold(
            pairs in proptest::collection::vec((0u8..40, 0.0f32..40.0, any::<bool>()), 1..200)
        ) {
            let pred: Vec<f32> = pairs.iter().map(|p| p.0 as f32).collect();
            let gt: Vec<f32> = pairs.iter().map(|p| p.1).collect();
            let mut noc: Vec<bool> = pairs.iter().map(|p| p.2).collect();
            noc[0] = true;
            let rep = evaluate(&[input("x", &pred, &gt, &noc)], &[1.0, 2.0, 3.0, 5.0]);
            let rep = rep.unwrap();
            for s in [Subset::NonOcc, Subset::All] {
                let pcts: Vec<f64> = [1.0, 2.0, 3.0, 5.0]
                    .iter()
                    .map(|&t| rep.get("x", t, s).unwrap().error_pct.unwrap_or(0.0))
                    .collect();
                for w in pcts.windows(2) {
                    prop_assert!(w[0] >= w[1]);
                }
                prop_assert!(pcts.iter().all(|p| (0.0..=100.0).contains(p)));
            }
            for t in [1.0, 2.0, 3.0, 5.0] {
                let noc = rep.aggregate(t, Subset::NonOcc).unwrap().px_count;
                prop_assert!(noc <= rep.aggregate(t, Subset::All).unwrap().px_count);
            }
        }
    }
}
