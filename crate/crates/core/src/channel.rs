//! Multipath channel parameters and frequency-domain array response.
//!
//! A traced [`RayPath`] becomes an [`Mpc`] (received power, delay, phase,
//! azimuth). A set of MPCs is synthesized into the K-subcarrier, M-antenna
//! complex response
//!
//! ```text
//! h[k][m] = sum_l sqrt(rho_l / K) * exp(j*(theta_l + 2*pi*k*tau_l*B / K)) * a_l[m]
//! ```
//!
//! with `rho_l` the linear (milliwatt) power, `a_l` the uniform-linear-array
//! steering vector, and the per-path phase `theta_l = (-2*pi*f_c*tau_l) mod 2*pi`
//! (static scenes, so the phase is purely geometric).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{RayPath, Scene};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One multipath component as observed at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mpc {
    /// Received signal strength in dBm.
    pub rss_dbm: f64,
    /// Time of arrival in seconds.
    pub toa_s: f64,
    /// Carrier phase in [0, 2*pi).
    pub phase_rad: f64,
    /// Azimuth of arrival at the base station, in (-pi, pi].
    pub aoa_az_rad: f64,
    /// Elevation of arrival; fixed 0 in 2D scenes.
    pub aoa_el_rad: f64,
}

/// Array and OFDM dimensions for response synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    pub bandwidth_hz: f64,
    pub carrier_frequency_hz: f64,
    /// Element spacing as a fraction of the carrier wavelength.
    pub element_spacing_wavelengths: f64,
}

impl ChannelConfig {
    /// Default array (10 antennas, half-wavelength spacing) and 64
    /// subcarriers over the scene's band.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            num_antennas: 10,
            num_subcarriers: 64,
            bandwidth_hz: scene.bandwidth_hz,
            carrier_frequency_hz: scene.carrier_frequency_hz,
            element_spacing_wavelengths: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas < 1 || self.num_subcarriers < 1 {
            return Err(Error::InvalidConfig(
                "channel needs at least one antenna and one subcarrier".into(),
            ));
        }
        if !(self.bandwidth_hz > 0.0)
            || !(self.carrier_frequency_hz > 0.0)
            || !(self.element_spacing_wavelengths > 0.0)
        {
            return Err(Error::InvalidConfig(
                "bandwidth, carrier frequency and element spacing must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Complex channel response, `num_subcarriers x num_antennas`, row-major by
/// subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    entries: Vec<Complex64>,
}

impl ChannelResponse {
    #[inline]
    pub fn get(&self, subcarrier: usize, antenna: usize) -> Complex64 {
        self.entries[subcarrier * self.num_antennas + antenna]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// `|h|` flattened subcarrier-major, antenna-minor.
    pub fn abs_flat(&self) -> Vec<f64> {
        self.entries.iter().map(|c| c.norm()).collect()
    }
}

/// Free-space path loss in dB: `20*log10(4*pi*d*f/c)`.
pub fn free_space_path_loss_db(distance_m: f64, frequency_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT).log10()
}

/// Convert a traced path into channel parameters.
///
/// TOA is `length/c`; RSS is the transmit power minus free-space path loss
/// minus a fixed per-bounce reflection loss; the azimuth is the direction of
/// the first path segment as seen from the base station.
pub fn path_to_mpc(path: &RayPath, scene: &Scene) -> Result<Mpc> {
    if path.vertices.len() < 2 {
        return Err(Error::DegenerateGeometry("path needs at least two vertices".into()));
    }
    let bs = path.vertices[0];
    let first = path.vertices[1];
    let seg = bs.distance(&first);
    if path.length_m <= 0.0 || seg <= 0.0 {
        return Err(Error::DegenerateGeometry("zero-length path".into()));
    }
    let fc = scene.carrier_frequency_hz;
    let toa_s = path.length_m / SPEED_OF_LIGHT;
    let rss_dbm = scene.tx_power_dbm
        - free_space_path_loss_db(path.length_m, fc)
        - path.bounce_count as f64 * scene.reflection_loss_db;
    let phase_rad =
        (-2.0 * std::f64::consts::PI * fc * toa_s).rem_euclid(2.0 * std::f64::consts::PI);
    Ok(Mpc {
        rss_dbm,
        toa_s,
        phase_rad,
        aoa_az_rad: (first.y - bs.y).atan2(first.x - bs.x),
        aoa_el_rad: 0.0,
    })
}

/// Uniform-linear-array steering vector:
/// `a[m] = exp(j*2*pi*spacing*m*sin(az)*cos(el))`, unit modulus per element.
pub fn steering_vector(config: &ChannelConfig, aoa_az: f64, aoa_el: f64) -> Vec<Complex64> {
    let factor = 2.0 * std::f64::consts::PI
        * config.element_spacing_wavelengths
        * aoa_az.sin()
        * aoa_el.cos();
    (0..config.num_antennas)
        .map(|m| Complex64::from_polar(1.0, factor * m as f64))
        .collect()
}

/// Synthesize the K x M response from a non-empty MPC list. Power is taken
/// in linear milliwatts (`rho = 10^(rss_dbm/10)`).
pub fn channel_response(mpcs: &[Mpc], config: &ChannelConfig) -> Result<ChannelResponse> {
    config.validate()?;
    if mpcs.is_empty() {
        return Err(Error::EmptyInput("channel response needs at least one MPC".into()));
    }
    let k_count = config.num_subcarriers;
    let m_count = config.num_antennas;
    let mut entries = vec![Complex64::new(0.0, 0.0); k_count * m_count];
    for mpc in mpcs {
        let rho = 10.0_f64.powf(mpc.rss_dbm / 10.0);
        let amp = (rho / k_count as f64).sqrt();
        let steering = steering_vector(config, mpc.aoa_az_rad, mpc.aoa_el_rad);
        for k in 0..k_count {
            let phase = mpc.phase_rad
                + 2.0 * std::f64::consts::PI * k as f64 * mpc.toa_s * config.bandwidth_hz
                    / k_count as f64;
            let coeff = Complex64::from_polar(amp, phase);
            let row = &mut entries[k * m_count..(k + 1) * m_count];
            for (e, a) in row.iter_mut().zip(steering.iter()) {
                *e += coeff * a;
            }
        }
    }
    if entries.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InvalidConfig("channel response has non-finite entries".into()));
    }
    Ok(ChannelResponse {
        num_subcarriers: k_count,
        num_antennas: m_count,
        entries,
    })
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

/// One MPC table row; also the ingestion format for externally traced data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcRecord {
    pub user_id: usize,
    pub x: f64,
    pub y: f64,
    pub mpc_index: usize,
    pub rss_dbm: f64,
    pub toa_s: f64,
    pub phase_rad: f64,
    pub aoa_az_rad: f64,
    pub aoa_el_rad: f64,
}

impl MpcRecord {
    pub fn mpc(&self) -> Mpc {
        Mpc {
            rss_dbm: self.rss_dbm,
            toa_s: self.toa_s,
            phase_rad: self.phase_rad,
            aoa_az_rad: self.aoa_az_rad,
            aoa_el_rad: self.aoa_el_rad,
        }
    }
}

pub fn write_mpc_table(path: &std::path::Path, records: &[MpcRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_mpc_table(path: &std::path::Path) -> Result<Vec<MpcRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}

/// One complex response entry on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub user_id: usize,
    pub subcarrier: usize,
    pub antenna: usize,
    pub re: f64,
    pub im: f64,
}

pub fn write_responses(
    path: &std::path::Path,
    responses: &[(usize, ChannelResponse)],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for (user_id, resp) in responses {
        for k in 0..resp.num_subcarriers {
            for m in 0..resp.num_antennas {
                let c = resp.get(k, m);
                writer.serialize(ResponseRecord {
                    user_id: *user_id,
                    subcarrier: k,
                    antenna: m,
                    re: c.re,
                    im: c.im,
                })?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read responses back, grouped by user in ascending user id. All users must
/// share the same dense subcarrier/antenna grid.
pub fn read_responses(path: &std::path::Path) -> Result<Vec<(usize, ChannelResponse)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<ResponseRecord> = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("response table is empty".into()));
    }
    let k_count = rows.iter().map(|r| r.subcarrier).max().unwrap() + 1;
    let m_count = rows.iter().map(|r| r.antenna).max().unwrap() + 1;
    let mut by_user: std::collections::BTreeMap<usize, Vec<Option<Complex64>>> =
        std::collections::BTreeMap::new();
    for r in &rows {
        let slot = by_user
            .entry(r.user_id)
            .or_insert_with(|| vec![None; k_count * m_count]);
        slot[r.subcarrier * m_count + r.antenna] = Some(Complex64::new(r.re, r.im));
    }
    let mut out = Vec::with_capacity(by_user.len());
    for (user_id, slots) in by_user {
        let entries: Option<Vec<Complex64>> = slots.into_iter().collect();
        let entries = entries.ok_or_else(|| {
            Error::Parse(format!("user {user_id} is missing response entries"))
        })?;
        out.push((
            user_id,
            ChannelResponse {
                num_subcarriers: k_count,
                num_antennas: m_count,
                entries,
            },
        ));
    }
    Ok(out)
}
