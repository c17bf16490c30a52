//! Feature and label matrices for the regressor.
//!
//! Two feature families: per-MPC channel parameters taken from the `n`
//! strongest components (azimuth, optionally RSS and TOA, laid out slot by
//! slot), and the flattened absolute channel response. Both are min-max
//! normalized per column; labels are the (x, y) positions, normalized the
//! same way.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelResponse, Mpc};
use crate::error::{Error, Result};
use crate::geometry::Point2D;
use crate::matrix::Matrix;

/// RSS (dBm) of the sentinel used to pad users with fewer MPCs than
/// requested. Padded users are flagged and can be excluded from runs.
pub const PAD_RSS_DBM: f64 = -200.0;

const PAD_MPC: Mpc = Mpc {
    rss_dbm: PAD_RSS_DBM,
    toa_s: 0.0,
    phase_rad: 0.0,
    aoa_az_rad: 0.0,
    aoa_el_rad: 0.0,
};

/// Which inputs feed the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    Aoa,
    AoaRss,
    AoaRssToa,
    AbsResponse,
}

impl FeatureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureMode::Aoa => "aoa",
            FeatureMode::AoaRss => "aoa-rss",
            FeatureMode::AoaRssToa => "aoa-rss-toa",
            FeatureMode::AbsResponse => "abs-response",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aoa" => Ok(FeatureMode::Aoa),
            "aoa-rss" => Ok(FeatureMode::AoaRss),
            "aoa-rss-toa" => Ok(FeatureMode::AoaRssToa),
            "abs-response" => Ok(FeatureMode::AbsResponse),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature mode '{other}' (expected aoa, aoa-rss, aoa-rss-toa or abs-response)"
            ))),
        }
    }

    /// Parameters contributed per MPC slot (0 for the response mode).
    fn params_per_mpc(&self) -> usize {
        match self {
            FeatureMode::Aoa => 1,
            FeatureMode::AoaRss => 2,
            FeatureMode::AoaRssToa => 3,
            FeatureMode::AbsResponse => 0,
        }
    }
}

/// Per-column min/max recorded when normalization is fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParam {
    pub min: f64,
    pub max: f64,
}

impl NormParam {
    /// Map into [0, 1]; a degenerate column (max == min) maps to 0.5.
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }

    #[inline]
    pub fn invert(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Normalized feature matrix plus the parameters needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub mode: FeatureMode,
    pub num_mpcs: usize,
    pub matrix: Matrix,
    pub norm_params: Vec<NormParam>,
    /// User row indices that needed sentinel padding.
    pub padded_users: Vec<usize>,
}

/// The `n` strongest MPCs in descending power order (ties broken by
/// ascending TOA, then ascending azimuth), padded with sentinels when fewer
/// exist. The flag reports whether padding happened.
pub fn select_top_mpcs(mpcs: &[Mpc], n: usize) -> Result<(Vec<Mpc>, bool)> {
    if n == 0 {
        return Err(Error::InvalidConfig("number of MPCs must be positive".into()));
    }
    if mpcs.is_empty() {
        return Err(Error::EmptyInput("cannot select MPCs from an empty list".into()));
    }
    let mut sorted = mpcs.to_vec();
    sorted.sort_by(|a, b| {
        b.rss_dbm
            .total_cmp(&a.rss_dbm)
            .then_with(|| a.toa_s.total_cmp(&b.toa_s))
            .then_with(|| a.aoa_az_rad.total_cmp(&b.aoa_az_rad))
    });
    sorted.truncate(n);
    let padded = sorted.len() < n;
    while sorted.len() < n {
        sorted.push(PAD_MPC);
    }
    Ok((sorted, padded))
}

/// Raw (unnormalized) feature matrix; returns the matrix and the indices of
/// padded users.
pub fn assemble_raw_features(
    per_user_mpcs: &[Vec<Mpc>],
    responses: Option<&[ChannelResponse]>,
    mode: FeatureMode,
    num_mpcs: usize,
) -> Result<(Matrix, Vec<usize>)> {
    match mode {
        FeatureMode::AbsResponse => {
            let responses = responses.ok_or_else(|| {
                Error::InvalidConfig("abs-response features need channel responses".into())
            })?;
            if responses.is_empty() {
                return Err(Error::EmptyInput("no responses to assemble".into()));
            }
            if !per_user_mpcs.is_empty() && per_user_mpcs.len() != responses.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} MPC lists but {} responses",
                    per_user_mpcs.len(),
                    responses.len()
                )));
            }
            let k = responses[0].num_subcarriers;
            let m = responses[0].num_antennas;
            let width = k * m;
            let mut data = Vec::with_capacity(responses.len() * width);
            for r in responses {
                if r.num_subcarriers != k || r.num_antennas != m {
                    return Err(Error::ShapeMismatch(
                        "all responses must share the same dimensions".into(),
                    ));
                }
                data.extend(r.abs_flat());
            }
            Ok((Matrix::from_vec(responses.len(), width, data), Vec::new()))
        }
        _ => {
            if per_user_mpcs.is_empty() {
                return Err(Error::EmptyInput("no users to assemble".into()));
            }
            let per = mode.params_per_mpc();
            let width = per * num_mpcs;
            let mut data = Vec::with_capacity(per_user_mpcs.len() * width);
            let mut padded_users = Vec::new();
            for (row, mpcs) in per_user_mpcs.iter().enumerate() {
                let (top, padded) = select_top_mpcs(mpcs, num_mpcs)?;
                if padded {
                    padded_users.push(row);
                }
                for mpc in &top {
                    data.push(mpc.aoa_az_rad);
                    if per >= 2 {
                        data.push(mpc.rss_dbm);
                    }
                    if per >= 3 {
                        data.push(mpc.toa_s);
                    }
                }
            }
            Ok((
                Matrix::from_vec(per_user_mpcs.len(), width, data),
                padded_users,
            ))
        }
    }
}

/// Fit per-column min/max on the given matrix.
pub fn fit_normalization(matrix: &Matrix) -> Vec<NormParam> {
    let mut params = vec![
        NormParam {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        matrix.cols()
    ];
    for row in matrix.iter_rows() {
        for (p, &v) in params.iter_mut().zip(row) {
            p.min = p.min.min(v);
            p.max = p.max.max(v);
        }
    }
    params
}

/// Apply previously fit per-column parameters.
pub fn apply_normalization(matrix: &Matrix, params: &[NormParam]) -> Result<Matrix> {
    if params.len() != matrix.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} norm params for {} columns",
            params.len(),
            matrix.cols()
        )));
    }
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        for (c, p) in params.iter().enumerate() {
            let v = out.get(r, c);
            out.set(r, c, p.apply(v));
        }
    }
    Ok(out)
}

/// Assemble and min-max normalize features, fitting the normalization on
/// this dataset.
pub fn assemble_features(
    per_user_mpcs: &[Vec<Mpc>],
    responses: Option<&[ChannelResponse]>,
    mode: FeatureMode,
    num_mpcs: usize,
) -> Result<FeatureSet> {
    let (raw, padded_users) = assemble_raw_features(per_user_mpcs, responses, mode, num_mpcs)?;
    let norm_params = fit_normalization(&raw);
    let matrix = apply_normalization(&raw, &norm_params)?;
    Ok(FeatureSet {
        mode,
        num_mpcs,
        matrix,
        norm_params,
        padded_users,
    })
}

/// Normalized (x, y) labels plus the fit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub matrix: Matrix,
    pub norm_params: [NormParam; 2],
}

pub fn normalize_labels(points: &[Point2D]) -> Result<LabelMatrix> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no label points".into()));
    }
    let raw = Matrix::from_vec(
        points.len(),
        2,
        points.iter().flat_map(|p| [p.x, p.y]).collect(),
    );
    let params = fit_normalization(&raw);
    let matrix = apply_normalization(&raw, &params)?;
    Ok(LabelMatrix {
        matrix,
        norm_params: [params[0], params[1]],
    })
}

pub fn denormalize_labels(matrix: &Matrix, norm_params: &[NormParam; 2]) -> Result<Vec<Point2D>> {
    if matrix.cols() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "label matrix must have 2 columns, got {}",
            matrix.cols()
        )));
    }
    Ok((0..matrix.rows())
        .map(|r| {
            Point2D::new(
                norm_params[0].invert(matrix.get(r, 0)),
                norm_params[1].invert(matrix.get(r, 1)),
            )
        })
        .collect())
}

/// Column names for the feature CSV header.
pub fn feature_column_names(
    mode: FeatureMode,
    num_mpcs: usize,
    num_subcarriers: usize,
    num_antennas: usize,
) -> Vec<String> {
    match mode {
        FeatureMode::AbsResponse => {
            let mut names = Vec::with_capacity(num_subcarriers * num_antennas);
            for k in 0..num_subcarriers {
                for m in 0..num_antennas {
                    names.push(format!("abs_k{k}_m{m}"));
                }
            }
            names
        }
        _ => {
            let mut names = Vec::with_capacity(mode.params_per_mpc() * num_mpcs);
            for slot in 1..=num_mpcs {
                names.push(format!("mpc{slot}_aoa_az_rad"));
                if mode.params_per_mpc() >= 2 {
                    names.push(format!("mpc{slot}_rss_dbm"));
                }
                if mode.params_per_mpc() >= 3 {
                    names.push(format!("mpc{slot}_toa_s"));
                }
            }
            names
        }
    }
}

/// Persist a matrix as CSV with a `user_id` column and named value columns.
pub fn write_matrix_csv(
    path: &std::path::Path,
    user_ids: &[usize],
    matrix: &Matrix,
    column_names: &[String],
) -> Result<()> {
    if user_ids.len() != matrix.rows() || column_names.len() != matrix.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids and {} names for a {}x{} matrix",
            user_ids.len(),
            column_names.len(),
            matrix.rows(),
            matrix.cols()
        )));
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string()];
    header.extend_from_slice(column_names);
    writer.write_record(&header)?;
    for (id, row) in user_ids.iter().zip(matrix.iter_rows()) {
        let mut record = vec![id.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_response, ChannelConfig};

    fn mpc(rss_dbm: f64, toa_s: f64, aoa_az_rad: f64) -> Mpc {
        Mpc {
            rss_dbm,
            toa_s,
            phase_rad: 0.0,
            aoa_az_rad,
            aoa_el_rad: 0.0,
        }
    }

    // --- select_top_mpcs ---------------------------------------------------

    #[test]
    fn selects_descending_by_power() {
        let mpcs = vec![
            mpc(-80.0, 1e-8, 0.1),
            mpc(-70.0, 2e-8, 0.2),
            mpc(-90.0, 3e-8, 0.3),
            mpc(-75.0, 4e-8, 0.4),
        ];
        let (top, padded) = select_top_mpcs(&mpcs, 3).unwrap();
        assert!(!padded);
        let powers: Vec<f64> = top.iter().map(|m| m.rss_dbm).collect();
        assert_eq!(powers, vec![-70.0, -75.0, -80.0]);
    }

    #[test]
    fn pads_with_sentinels() {
        let (top, padded) = select_top_mpcs(&[mpc(-60.0, 1e-8, 0.5)], 3).unwrap();
        assert!(padded);
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].rss_dbm, -60.0);
        assert_eq!(top[1].rss_dbm, PAD_RSS_DBM);
        assert_eq!(top[2].toa_s, 0.0);
    }

    #[test]
    fn n_one_is_argmax() {
        let mpcs = vec![mpc(-80.0, 1e-8, 0.1), mpc(-70.0, 2e-8, 0.2)];
        let (top, _) = select_top_mpcs(&mpcs, 1).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].rss_dbm, -70.0);
    }

    #[test]
    fn power_ties_break_on_toa() {
        let mpcs = vec![mpc(-70.0, 2e-8, 0.9), mpc(-70.0, 1e-8, 0.1)];
        let (top, _) = select_top_mpcs(&mpcs, 2).unwrap();
        assert_eq!(top[0].toa_s, 1e-8);
    }

    #[test]
    fn zero_n_is_error() {
        assert!(select_top_mpcs(&[mpc(-70.0, 1e-8, 0.0)], 0).is_err());
    }

    // --- normalization -------------------------------------------------------

    #[test]
    fn min_max_maps_to_unit_interval() {
        let m = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let params = fit_normalization(&m);
        let n = apply_normalization(&m, &params).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_half() {
        let m = Matrix::from_rows(&[vec![7.0], vec![7.0]]);
        let params = fit_normalization(&m);
        let n = apply_normalization(&m, &params).unwrap();
        assert_eq!(n.data(), &[0.5, 0.5]);
    }

    #[test]
    fn normalization_idempotent_via_refit() {
        // Fitting on already-normalized data gives identity parameters.
        let m = Matrix::from_rows(&[vec![1.0, -3.0], vec![4.0, 5.0], vec![2.5, 1.0]]);
        let p1 = fit_normalization(&m);
        let n1 = apply_normalization(&m, &p1).unwrap();
        let p2 = fit_normalization(&n1);
        let n2 = apply_normalization(&n1, &p2).unwrap();
        for (a, b) in n1.data().iter().zip(n2.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // --- assemble_features ------------------------------------------------------

    fn three_mpcs() -> Vec<Mpc> {
        vec![
            mpc(-60.0, 1.0e-8, 0.1),
            mpc(-66.0, 1.5e-8, 0.2),
            mpc(-72.0, 2.0e-8, -0.3),
        ]
    }

    #[test]
    fn feature_widths_match_mode() {
        let users = vec![three_mpcs(), three_mpcs()];
        for (mode, width) in [
            (FeatureMode::Aoa, 3),
            (FeatureMode::AoaRss, 6),
            (FeatureMode::AoaRssToa, 9),
        ] {
            let fs = assemble_features(&users, None, mode, 3).unwrap();
            assert_eq!(fs.matrix.cols(), width);
            assert_eq!(fs.matrix.rows(), 2);
            assert!(fs.padded_users.is_empty());
            assert!(fs.matrix.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn mpc_order_does_not_matter() {
        let mut shuffled = three_mpcs();
        shuffled.reverse();
        let a = assemble_features(&[three_mpcs()], None, FeatureMode::AoaRssToa, 3).unwrap();
        let b = assemble_features(&[shuffled], None, FeatureMode::AoaRssToa, 3).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn abs_response_features_ignore_global_phase() {
        let cfg = ChannelConfig {
            num_antennas: 4,
            num_subcarriers: 8,
            bandwidth_hz: 100e6,
            carrier_frequency_hz: 5e9,
            element_spacing_wavelengths: 0.5,
        };
        let base = Mpc {
            rss_dbm: -40.0,
            toa_s: 2e-8,
            phase_rad: 0.3,
            aoa_az_rad: 0.4,
            aoa_el_rad: 0.0,
        };
        let mut rotated = base;
        rotated.phase_rad += 1.234; // same rotation applied to the only path
        let r1 = channel_response(&[base], &cfg).unwrap();
        let r2 = channel_response(&[rotated], &cfg).unwrap();
        let f1 = assemble_raw_features(&[], Some(&[r1]), FeatureMode::AbsResponse, 3).unwrap();
        let f2 = assemble_raw_features(&[], Some(&[r2]), FeatureMode::AbsResponse, 3).unwrap();
        for (a, b) in f1.0.data().iter().zip(f2.0.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(f1.0.cols(), 32);
    }

    #[test]
    fn abs_response_requires_responses() {
        assert!(assemble_features(&[three_mpcs()], None, FeatureMode::AbsResponse, 3).is_err());
    }

    #[test]
    fn padded_users_are_flagged() {
        let users = vec![three_mpcs(), vec![mpc(-60.0, 1e-8, 0.0)]];
        let fs = assemble_features(&users, None, FeatureMode::Aoa, 3).unwrap();
        assert_eq!(fs.padded_users, vec![1]);
    }

    // --- labels --------------------------------------------------------------

    #[test]
    fn label_corners_normalize_to_unit() {
        let lm = normalize_labels(&[Point2D::new(0.0, 0.0), Point2D::new(10.0, 10.0)]).unwrap();
        assert_eq!(lm.matrix.row(0), &[0.0, 0.0]);
        assert_eq!(lm.matrix.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn label_roundtrip_identity() {
        let points: Vec<Point2D> = (0..30)
            .map(|i| Point2D::new(3.0 + 0.7 * i as f64, -2.0 + 1.3 * (i % 7) as f64))
            .collect();
        let lm = normalize_labels(&points).unwrap();
        let back = denormalize_labels(&lm.matrix, &lm.norm_params).unwrap();
        for (p, q) in points.iter().zip(&back) {
            assert!((p.x - q.x).abs() < 1e-12);
            assert!((p.y - q.y).abs() < 1e-12);
        }
    }

    #[test]
    fn denormalize_midpoint() {
        let params = [
            NormParam { min: 0.0, max: 10.0 },
            NormParam { min: 0.0, max: 20.0 },
        ];
        let m = Matrix::from_rows(&[vec![0.5, 0.5]]);
        let points = denormalize_labels(&m, &params).unwrap();
        assert_eq!((points[0].x, points[0].y), (5.0, 10.0));
    }

    #[test]
    fn empty_labels_is_error() {
        assert!(normalize_labels(&[]).is_err());
    }

    // --- csv -----------------------------------------------------------------

    #[test]
    fn matrix_csv_has_named_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let m = Matrix::from_rows(&[vec![0.0, 0.5], vec![1.0, 0.25]]);
        let names = feature_column_names(FeatureMode::AoaRss, 1, 0, 0);
        write_matrix_csv(&path, &[0, 1], &m, &names).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("user_id,mpc1_aoa_az_rad,mpc1_rss_dbm"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest::proptest! {
        #[test]
        fn normalized_entries_stay_in_unit_interval(
            values in proptest::collection::vec(-1e6_f64..1e6, 4..40)
        ) {
            let m = Matrix::from_vec(values.len(), 1, values);
            let params = fit_normalization(&m);
            let n = apply_normalization(&m, &params).unwrap();
            for v in n.data() {
                proptest::prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
