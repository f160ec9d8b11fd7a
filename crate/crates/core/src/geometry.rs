//! Cluster-based geometric channels between the BS, the RIS and the UEs.
//!
//! Axis convention: the RIS planar array lies in the x-z plane and faces +y.
//! `theta_ver` is the polar angle from +z and `theta_hor` the azimuth from +x,
//! so the horizontal phase term `cos(theta_hor) sin(theta_ver)` is the x-component
//! and the vertical term `cos(theta_ver)` the z-component of the arrival direction.
//! The BS carries a vertical ULA, parameterized by a zenith angle only.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{cis, CMatrix, CVector};
use crate::{Error, Result};

pub type Point = Vector3<f64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfConstants {
    /// Hz
    pub carrier_frequency: f64,
    pub pathloss_exponent: f64,
    /// Linear reference channel power `P0`.
    pub reference_power: f64,
    /// m/s
    pub speed_of_light: f64,
}

/// Free-space reference power `(c / 4π f_c)²`: with `α = 1` a single segment
/// of length `d` then has the Friis amplitude `λ / (4π d)`.
pub fn free_space_reference_power(carrier_frequency: f64, speed_of_light: f64) -> f64 {
    (speed_of_light / (4.0 * PI * carrier_frequency)).powi(2)
}

impl Default for RfConstants {
    fn default() -> Self {
        let carrier_frequency = 2.4e9;
        Self {
            carrier_frequency,
            pathloss_exponent: 1.0,
            reference_power: free_space_reference_power(carrier_frequency, SPEED_OF_LIGHT),
            speed_of_light: SPEED_OF_LIGHT,
        }
    }
}

/// Positions, velocities, array sizes and RF constants of one scenario snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGeometry {
    pub bs_position: Point,
    pub ris_position: Point,
    pub ue_positions: Vec<Point>,
    pub ue_velocities: Vec<Point>,
    /// Scatter points on the BS-to-RIS link.
    pub bs_clusters: Vec<Point>,
    pub bs_cluster_velocities: Vec<Point>,
    /// Scatter points on each UE-to-RIS link, indexed by UE.
    pub ue_clusters: Vec<Vec<Point>>,
    pub ue_cluster_velocities: Vec<Vec<Point>>,
    pub bs_antennas: usize,
    pub ris_hor: usize,
    pub ris_ver: usize,
    pub rf: RfConstants,
}

impl ScenarioGeometry {
    pub fn num_ues(&self) -> usize {
        self.ue_positions.len()
    }

    pub fn ris_elements(&self) -> usize {
        self.ris_hor * self.ris_ver
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidGeometry(msg.to_string()));
        if self.bs_antennas == 0 {
            return bad("BS needs at least one antenna");
        }
        if self.ris_hor == 0 || self.ris_ver == 0 {
            return bad("RIS dimensions must be at least 1x1");
        }
        if !(self.rf.carrier_frequency > 0.0) {
            return bad("carrier frequency must be positive");
        }
        if !(self.rf.reference_power > 0.0) {
            return bad("reference power must be positive");
        }
        if !(self.rf.speed_of_light > 0.0) {
            return bad("speed of light must be positive");
        }
        if self.ue_velocities.len() != self.ue_positions.len()
            || self.ue_clusters.len() != self.ue_positions.len()
            || self.ue_cluster_velocities.len() != self.ue_positions.len()
            || self.bs_cluster_velocities.len() != self.bs_clusters.len()
        {
            return bad("position and velocity lists disagree in length");
        }
        for (c, v) in self.ue_clusters.iter().zip(&self.ue_cluster_velocities) {
            if c.len() != v.len() {
                return bad("UE cluster velocity list length mismatch");
            }
        }
        let all_points = [self.bs_position, self.ris_position]
            .into_iter()
            .chain(self.ue_positions.iter().copied())
            .chain(self.bs_clusters.iter().copied())
            .chain(self.ue_clusters.iter().flatten().copied());
        for p in all_points {
            if !p.iter().all(|x| x.is_finite()) {
                return bad("non-finite position");
            }
        }
        Ok(())
    }

    /// Waypoint lists for UE `k`: the LoS path first, then one path per cluster.
    pub fn ue_waypoints(&self, k: usize) -> Vec<Vec<Point>> {
        let ue = self.ue_positions[k];
        std::iter::once(vec![ue, self.ris_position])
            .chain(self.ue_clusters[k].iter().map(|c| vec![ue, *c, self.ris_position]))
            .collect()
    }

    pub fn bs_waypoints(&self) -> Vec<Vec<Point>> {
        let bs = self.bs_position;
        std::iter::once(vec![bs, self.ris_position])
            .chain(self.bs_clusters.iter().map(|c| vec![bs, *c, self.ris_position]))
            .collect()
    }
}

/// Parameters of one propagation path ending at the RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    /// Meters, in travel order.
    pub segment_lengths: Vec<f64>,
    /// Seconds.
    pub delay: f64,
    pub arrival_hor: f64,
    pub arrival_ver: f64,
    /// Zenith of departure, set only for paths that leave the BS.
    pub departure_ver: Option<f64>,
    /// `sqrt(P0) / prod(d^alpha) * e^{-j 2 pi f_c tau}`.
    pub gain: Complex64,
}

/// UPA response `a_hor ⊗ a_ver`; element `(i_h, i_v)` sits at index `i_h * n_ver + i_v`.
pub fn upa_response(theta_hor: f64, theta_ver: f64, n_hor: usize, n_ver: usize) -> CVector {
    let step_hor = PI * theta_hor.cos() * theta_ver.sin();
    let step_ver = PI * theta_ver.cos();
    let hor = CVector::from_fn(n_hor, |i, _| cis(i as f64 * step_hor));
    let ver = CVector::from_fn(n_ver, |i, _| cis(i as f64 * step_ver));
    hor.kronecker(&ver)
}

/// Vertical ULA response; the UPA response with a single horizontal element.
pub fn ula_response(phi_ver: f64, m: usize) -> CVector {
    upa_response(0.0, phi_ver, 1, m)
}

/// Polar and (folded) azimuth angles of a direction vector.
///
/// The azimuth is folded into `[0, pi]` through `|y|`: the array response depends
/// only on the x and z components, so mirror images across the array plane are
/// indistinguishable.
pub fn direction_angles(direction: &Point) -> (f64, f64) {
    let u = direction.normalize();
    let theta_ver = u.z.clamp(-1.0, 1.0).acos();
    let theta_hor = u.y.abs().atan2(u.x);
    (theta_hor, theta_ver)
}

/// Path parameters from an ordered waypoint list ending at the RIS.
///
/// A departure zenith is attached when the first waypoint is the BS position.
pub fn path_params(waypoints: &[Point], geometry: &ScenarioGeometry) -> Result<PathSpec> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidGeometry("a path needs at least two waypoints".into()));
    }
    let last = waypoints[waypoints.len() - 1];
    if last != geometry.ris_position {
        return Err(Error::InvalidGeometry("path must terminate at the RIS".into()));
    }
    let segment_lengths: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    if let Some(i) = segment_lengths.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::InvalidGeometry(format!("segment {i} has zero length")));
    }
    let rf = &geometry.rf;
    let delay = segment_lengths.iter().sum::<f64>() / rf.speed_of_light;
    let attenuation: f64 = segment_lengths.iter().map(|d| d.powf(rf.pathloss_exponent)).product();
    let gain = rf.reference_power.sqrt() / attenuation * cis(-2.0 * PI * rf.carrier_frequency * delay);

    let toward_source = waypoints[waypoints.len() - 2] - last;
    let (arrival_hor, arrival_ver) = direction_angles(&toward_source);
    let departure_ver = (waypoints[0] == geometry.bs_position).then(|| {
        let leaving = (waypoints[1] - waypoints[0]).normalize();
        leaving.z.clamp(-1.0, 1.0).acos()
    });

    Ok(PathSpec {
        segment_lengths,
        delay,
        arrival_hor,
        arrival_ver,
        departure_ver,
        gain,
    })
}

pub fn ue_channel_from_paths(paths: &[PathSpec], n_hor: usize, n_ver: usize) -> CVector {
    let mut h = CVector::zeros(n_hor * n_ver);
    for p in paths {
        h += upa_response(p.arrival_hor, p.arrival_ver, n_hor, n_ver) * p.gain;
    }
    h
}

pub fn bs_channel_from_paths(paths: &[PathSpec], n_hor: usize, n_ver: usize, m: usize) -> Result<CMatrix> {
    let mut h_r = CMatrix::zeros(n_hor * n_ver, m);
    for p in paths {
        let phi = p
            .departure_ver
            .ok_or_else(|| Error::InvalidGeometry("BS path without a departure angle".into()))?;
        let a_r = upa_response(p.arrival_hor, p.arrival_ver, n_hor, n_ver) * p.gain;
        let a_b = ula_response(phi, m);
        h_r += a_r * a_b.adjoint();
    }
    Ok(h_r)
}

pub fn build_ue_channel(geometry: &ScenarioGeometry, k: usize) -> Result<CVector> {
    if k >= geometry.num_ues() {
        return Err(Error::InvalidArgument(format!("UE index {k} out of range")));
    }
    let paths = geometry
        .ue_waypoints(k)
        .iter()
        .map(|w| path_params(w, geometry))
        .collect::<Result<Vec<_>>>()?;
    Ok(ue_channel_from_paths(&paths, geometry.ris_hor, geometry.ris_ver))
}

pub fn build_bs_channel(geometry: &ScenarioGeometry) -> Result<CMatrix> {
    let paths = geometry
        .bs_waypoints()
        .iter()
        .map(|w| path_params(w, geometry))
        .collect::<Result<Vec<_>>>()?;
    bs_channel_from_paths(&paths, geometry.ris_hor, geometry.ris_ver, geometry.bs_antennas)
}

/// All channels of a scenario snapshot together with their path parameters.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub h: Vec<CVector>,
    pub h_r: CMatrix,
    pub ue_paths: Vec<Vec<PathSpec>>,
    pub bs_paths: Vec<PathSpec>,
}

impl ChannelSet {
    pub fn build(geometry: &ScenarioGeometry) -> Result<Self> {
        geometry.validate()?;
        let ue_paths = (0..geometry.num_ues())
            .map(|k| {
                geometry
                    .ue_waypoints(k)
                    .iter()
                    .map(|w| path_params(w, geometry))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let bs_paths = geometry
            .bs_waypoints()
            .iter()
            .map(|w| path_params(w, geometry))
            .collect::<Result<Vec<_>>>()?;
        let (nh, nv) = (geometry.ris_hor, geometry.ris_ver);
        let h = ue_paths.iter().map(|p| ue_channel_from_paths(p, nh, nv)).collect();
        let h_r = bs_channel_from_paths(&bs_paths, nh, nv, geometry.bs_antennas)?;
        Ok(Self {
            h,
            h_r,
            ue_paths,
            bs_paths,
        })
    }
}

/// Translate UEs and cluster points by `velocity * dt`; BS and RIS stay put.
pub fn advance_mobility(geometry: &ScenarioGeometry, dt: f64) -> Result<ScenarioGeometry> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("mobility step must be >= 0, got {dt}")));
    }
    let mut next = geometry.clone();
    let step = |points: &mut [Point], vel: &[Point]| {
        for (p, v) in points.iter_mut().zip(vel) {
            *p += v * dt;
        }
    };
    step(&mut next.ue_positions, &geometry.ue_velocities);
    step(&mut next.bs_clusters, &geometry.bs_cluster_velocities);
    for (c, v) in next.ue_clusters.iter_mut().zip(&geometry.ue_cluster_velocities) {
        step(c, v);
    }
    Ok(next)
}

/// Axis-aligned box `[min, min + size]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min: Point,
    pub size: Point,
}

impl Region {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(
            self.min.x + rng.random::<f64>() * self.size.x,
            self.min.y + rng.random::<f64>() * self.size.y,
            self.min.z + rng.random::<f64>() * self.size.z,
        )
    }
}

/// Layout parameters from which scenarios are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioLayout {
    pub bs_position: Point,
    pub ris_position: Point,
    pub num_ues: usize,
    /// UE drop area; its z extent is ignored in favor of `ue_height`.
    pub ue_area: Region,
    pub ue_height: f64,
    pub cluster_region: Region,
    pub clusters_per_link: usize,
    pub bs_antennas: usize,
    pub ris_hor: usize,
    pub ris_ver: usize,
    /// m/s, shared by UEs and clusters.
    pub speed: f64,
    pub rf: RfConstants,
}

impl Default for ScenarioLayout {
    fn default() -> Self {
        Self {
            bs_position: Point::new(0.0, 0.0, 35.0),
            ris_position: Point::new(-50.0, 0.0, 10.0),
            num_ues: 2,
            ue_area: Region {
                min: Point::new(-50.0, -25.0, 0.0),
                size: Point::new(100.0, 50.0, 0.0),
            },
            ue_height: 1.0,
            cluster_region: Region {
                min: Point::new(-100.0, -50.0, 0.0),
                size: Point::new(200.0, 100.0, 50.0),
            },
            clusters_per_link: 3,
            bs_antennas: 4,
            ris_hor: 8,
            ris_ver: 4,
            speed: 0.0,
            rf: RfConstants::default(),
        }
    }
}

fn horizontal_velocity<R: Rng + ?Sized>(rng: &mut R, speed: f64) -> Point {
    let heading = rng.random::<f64>() * 2.0 * PI;
    Point::new(speed * heading.cos(), speed * heading.sin(), 0.0)
}

impl ScenarioLayout {
    /// Draw one scenario. Headings are drawn even at zero speed so that the
    /// random stream, and hence every position, is independent of `speed`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScenarioGeometry {
        let mut ue_positions = Vec::with_capacity(self.num_ues);
        let mut ue_velocities = Vec::with_capacity(self.num_ues);
        let mut ue_clusters = Vec::with_capacity(self.num_ues);
        let mut ue_cluster_velocities = Vec::with_capacity(self.num_ues);
        for _ in 0..self.num_ues {
            let mut p = self.ue_area.sample(rng);
            p.z = self.ue_height;
            ue_positions.push(p);
            ue_velocities.push(horizontal_velocity(rng, self.speed));
            let clusters: Vec<Point> = (0..self.clusters_per_link)
                .map(|_| self.cluster_region.sample(rng))
                .collect();
            let vel = clusters.iter().map(|_| horizontal_velocity(rng, self.speed)).collect();
            ue_clusters.push(clusters);
            ue_cluster_velocities.push(vel);
        }
        let bs_clusters: Vec<Point> = (0..self.clusters_per_link)
            .map(|_| self.cluster_region.sample(rng))
            .collect();
        let bs_cluster_velocities = bs_clusters
            .iter()
            .map(|_| horizontal_velocity(rng, self.speed))
            .collect();
        ScenarioGeometry {
            bs_position: self.bs_position,
            ris_position: self.ris_position,
            ue_positions,
            ue_velocities,
            bs_clusters,
            bs_cluster_velocities,
            ue_clusters,
            ue_cluster_velocities,
            bs_antennas: self.bs_antennas,
            ris_hor: self.ris_hor,
            ris_ver: self.ris_ver,
            rf: self.rf,
        }
    }
}
