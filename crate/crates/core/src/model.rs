//! Physical models: air-to-ground rate, rotary-wing propulsion power and the
//! per-edge time/energy weights of the complete graph over depot and sensors.
//!
//! Everything here is in SI linear units. Decibel quantities are converted
//! once, when an [`InstanceFile`] is turned into an [`Instance`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A horizontal position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Free-space link between a ground sensor and the UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    /// Channel power gain at 1 m, linear.
    pub ref_gain: f64,
    /// Noise power in watts.
    pub noise_power_w: f64,
    pub altitude_m: f64,
}

impl RadioParams {
    /// SNR at horizontal distance `d` from the sensor.
    pub fn snr(&self, d: f64) -> f64 {
        self.tx_power_w * self.ref_gain / (self.noise_power_w * (self.altitude_m.powi(2) + d * d))
    }

    /// Infallible rate used on hot paths once the parameters are validated.
    pub fn rate(&self, d: f64) -> f64 {
        self.bandwidth_hz * (1.0 + self.snr(d)).log2()
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("bandwidth", self.bandwidth_hz),
            ("tx power", self.tx_power_w),
            ("reference gain", self.ref_gain),
            ("noise power", self.noise_power_w),
            ("altitude", self.altitude_m),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 2e6,
            tx_power_w: 0.1,
            ref_gain: db_to_linear(-60.0),
            noise_power_w: dbm_to_watts(-110.0),
            altitude_m: 100.0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Achievable rate in bits/s at horizontal distance `horizontal_dist` from the
/// sensor, at the radio's fixed altitude.
pub fn achievable_rate(radio: &RadioParams, horizontal_dist: f64) -> Result<f64> {
    if !horizontal_dist.is_finite() || horizontal_dist < 0.0 {
        return Err(Error::InvalidInput(format!(
            "horizontal distance must be finite and non-negative, got {horizontal_dist}"
        )));
    }
    let params = [
        radio.bandwidth_hz,
        radio.tx_power_w,
        radio.ref_gain,
        radio.noise_power_w,
        radio.altitude_m,
    ];
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "radio parameters must be finite".into(),
        ));
    }
    Ok(radio.rate(horizontal_dist))
}

/// Constants of the blade-profile / induced / parasite rotary-wing power model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotorConstants {
    /// Blade profile power in hover (W).
    pub p0: f64,
    /// Induced power in hover (W).
    pub pi: f64,
    /// Rotor blade tip speed (m/s).
    pub u_tip: f64,
    /// Mean rotor induced velocity in hover (m/s).
    pub v0: f64,
    /// Fuselage drag ratio.
    pub d0: f64,
    /// Rotor solidity.
    pub solidity: f64,
    /// Air density (kg/m^3).
    pub air_density: f64,
    /// Rotor disc area (m^2).
    pub rotor_area: f64,
}

impl RotorConstants {
    /// Values commonly used for a small rotary-wing UAV in the energy-efficient
    /// UAV communication literature. They reproduce 126 W at 10 m/s and 356 W
    /// at 30 m/s; at 18 m/s they give about 159 W.
    pub fn reference() -> Self {
        Self {
            p0: 79.8563,
            pi: 88.6279,
            u_tip: 120.0,
            v0: 4.03,
            d0: 0.6,
            solidity: 0.05,
            air_density: 1.225,
            rotor_area: 0.503,
        }
    }

    pub fn power(&self, v: f64) -> f64 {
        let blade = self.p0 * (1.0 + 3.0 * v * v / (self.u_tip * self.u_tip));
        let v0sq = self.v0 * self.v0;
        let inner = (1.0 + v.powi(4) / (4.0 * v0sq * v0sq)).sqrt() - v * v / (2.0 * v0sq);
        // `inner` is mathematically positive but cancels badly at high speed.
        let induced = self.pi * inner.max(0.0).sqrt();
        let parasite =
            0.5 * self.d0 * self.air_density * self.solidity * self.rotor_area * v.powi(3);
        blade + induced + parasite
    }
}

/// Table I speed/propulsion-power pairs: maximum-endurance, maximum-range and
/// maximum speed.
pub const DEFAULT_POWER_TABLE: [(f64, f64); 3] = [(10.0, 126.0), (18.0, 162.0), (30.0, 356.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct UavPowerModel {
    /// Cruise speed used between sensors (m/s).
    pub speed: f64,
    /// Propulsion power at the cruise speed (W).
    pub propulsion_power: f64,
    pub hover_power: f64,
    pub max_speed: f64,
    pub rotor: Option<RotorConstants>,
    /// Additional tabulated (speed, power) pairs for speeds other than cruise.
    pub power_table: Vec<(f64, f64)>,
}

impl Default for UavPowerModel {
    fn default() -> Self {
        Self {
            speed: 18.0,
            propulsion_power: 162.0,
            hover_power: 165.0,
            max_speed: 30.0,
            rotor: None,
            power_table: DEFAULT_POWER_TABLE.to_vec(),
        }
    }
}

impl UavPowerModel {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("speed", self.speed),
            ("propulsion power", self.propulsion_power),
            ("hover power", self.hover_power),
            ("max speed", self.max_speed),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if self.speed > self.max_speed {
            return Err(Error::InvalidInstance(format!(
                "cruise speed {} exceeds max speed {}",
                self.speed, self.max_speed
            )));
        }
        for &(v, p) in &self.power_table {
            if !(v.is_finite() && v > 0.0 && p.is_finite() && p > 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "bad power table entry ({v}, {p})"
                )));
            }
        }
        Ok(())
    }

    /// Knots of the tabulated power curve: hover at zero speed, the cruise pair,
    /// then any extra table entries. The cruise pair wins over a table entry at
    /// the same speed.
    pub fn power_knots(&self) -> Vec<(f64, f64)> {
        let mut knots = vec![(0.0, self.hover_power), (self.speed, self.propulsion_power)];
        for &(v, p) in &self.power_table {
            if knots.iter().all(|&(kv, _)| (kv - v).abs() > 1e-9) {
                knots.push((v, p));
            }
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        knots
    }

    /// Power drawn at `speed`, by piecewise-linear interpolation over
    /// [`Self::power_knots`]; linear extrapolation past the last knot.
    ///
    /// The curve passes exactly through hover power at zero speed and the
    /// cruise power at cruise speed, so trajectories evaluated with it agree
    /// with the edge weights of [`build_edge_weights`].
    pub fn power_at(&self, speed: f64) -> f64 {
        let knots = self.power_knots();
        let last = knots.len() - 1;
        let seg = knots
            .windows(2)
            .position(|w| speed <= w[1].0)
            .unwrap_or(last - 1);
        let (v0, p0) = knots[seg];
        let (v1, p1) = knots[seg + 1];
        p0 + (p1 - p0) * (speed - v0) / (v1 - v0)
    }
}

/// Propulsion power from the rotor model at `speed`.
pub fn propulsion_power(uav: &UavPowerModel, speed: f64) -> Result<f64> {
    let rotor = uav.rotor.as_ref().ok_or(Error::PowerModelUnavailable)?;
    if !speed.is_finite() || speed < 0.0 || speed > uav.max_speed {
        return Err(Error::InvalidInput(format!(
            "speed {speed} outside [0, {}]",
            uav.max_speed
        )));
    }
    Ok(rotor.power(speed))
}

/// Depot, sensors and all physical parameters, in SI linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub depot: Point,
    pub sensors: Vec<Point>,
    pub data_bits: Vec<f64>,
    pub radio: RadioParams,
    pub uav: UavPowerModel,
    /// Coverage-disc radius inside which the sensor link meets its QoS (m).
    pub coverage_radius: f64,
}

impl Instance {
    pub fn new(
        depot: Point,
        sensors: Vec<Point>,
        data_bits: Vec<f64>,
        radio: RadioParams,
        uav: UavPowerModel,
        coverage_radius: f64,
    ) -> Result<Self> {
        let inst = Self {
            depot,
            sensors,
            data_bits,
            radio,
            uav,
            coverage_radius,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Table I parameters with 500 Mbit per sensor.
    pub fn with_defaults(depot: Point, sensors: Vec<Point>) -> Result<Self> {
        let k = sensors.len();
        Self::new(
            depot,
            sensors,
            vec![500e6; k],
            RadioParams::default(),
            UavPowerModel::default(),
            50.0,
        )
    }

    pub fn k(&self) -> usize {
        self.sensors.len()
    }

    /// Position of node `i` on the extended node set (0 = depot).
    pub fn node(&self, i: usize) -> Point {
        if i == 0 {
            self.depot
        } else {
            self.sensors[i - 1]
        }
    }

    /// Hover time needed to download sensor `i` (1-based) from directly above.
    pub fn hover_time(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.data_bits[i - 1] / self.radio.rate(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.uav.validate()?;
        if self.sensors.is_empty() {
            return Err(Error::InvalidInstance(
                "at least one sensor is required".into(),
            ));
        }
        if self.data_bits.len() != self.sensors.len() {
            return Err(Error::InvalidInstance(format!(
                "{} data sizes for {} sensors",
                self.data_bits.len(),
                self.sensors.len()
            )));
        }
        if let Some(d) = self
            .data_bits
            .iter()
            .find(|d| !(d.is_finite() && **d > 0.0))
        {
            return Err(Error::InvalidInstance(format!(
                "data size must be positive, got {d}"
            )));
        }
        if !(self.coverage_radius.is_finite() && self.coverage_radius > 0.0) {
            return Err(Error::InvalidInstance(format!(
                "coverage radius must be positive, got {}",
                self.coverage_radius
            )));
        }
        let nodes: Vec<Point> = std::iter::once(self.depot)
            .chain(self.sensors.iter().copied())
            .collect();
        if nodes.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInstance("coordinates must be finite".into()));
        }
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                if nodes[i] == nodes[j] {
                    return Err(Error::InvalidInstance(format!(
                        "nodes {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-edge time and energy on the complete directed graph over depot (index
/// 0) and sensors (1..=K). Edge `(i, j)` bundles the hover at `i` with the
/// flight from `i` to `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    time: Vec<f64>,
    energy: Vec<f64>,
}

impl WeightMatrix {
    /// Builds a matrix directly from dense row-major tables of size
    /// `(K+1)^2`. Diagonal entries are ignored.
    pub fn from_raw(n: usize, time: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        if n < 2 || time.len() != n * n || energy.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "weight tables must be {n}x{n} with n >= 2"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && !(time[i * n + j] > 0.0 && energy[i * n + j] > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "edge ({i},{j}) must have positive weights"
                    )));
                }
            }
        }
        Ok(Self { n, time, energy })
    }

    /// Number of sensors.
    pub fn k(&self) -> usize {
        self.n - 1
    }

    /// Number of nodes including the depot.
    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn time(&self, i: usize, j: usize) -> f64 {
        self.time[i * self.n + j]
    }

    pub fn energy(&self, i: usize, j: usize) -> f64 {
        self.energy[i * self.n + j]
    }
}

pub fn build_edge_weights(inst: &Instance) -> WeightMatrix {
    let n = inst.k() + 1;
    let mut time = vec![0.0; n * n];
    let mut energy = vec![0.0; n * n];
    let uav = &inst.uav;
    for i in 0..n {
        let hover = inst.hover_time(i);
        for j in 0..n {
            if i == j {
                continue;
            }
            let flight = inst.node(i).dist(inst.node(j)) / uav.speed;
            time[i * n + j] = hover + flight;
            energy[i * n + j] = uav.hover_power * hover + uav.propulsion_power * flight;
        }
    }
    WeightMatrix { n, time, energy }
}

/// On-disk instance description; radio quantities in engineering units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub depot: Point,
    pub sensors: Vec<Point>,
    pub data_mbits: Vec<f64>,
    #[serde(default)]
    pub radio: RadioFile,
    #[serde(default)]
    pub uav: UavFile,
    #[serde(default = "default_d_th")]
    pub d_th_m: f64,
}

fn default_d_th() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioFile {
    pub bandwidth_mhz: f64,
    pub tx_power_w: f64,
    pub ref_gain_db: f64,
    pub noise_dbm: f64,
    pub altitude_m: f64,
}

impl Default for RadioFile {
    fn default() -> Self {
        Self {
            bandwidth_mhz: 2.0,
            tx_power_w: 0.1,
            ref_gain_db: -60.0,
            noise_dbm: -110.0,
            altitude_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UavFile {
    pub speed_ms: f64,
    pub pf_w: f64,
    pub ph_w: f64,
    pub vmax_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotor: Option<RotorConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_table: Option<Vec<[f64; 2]>>,
}

impl Default for UavFile {
    fn default() -> Self {
        Self {
            speed_ms: 18.0,
            pf_w: 162.0,
            ph_w: 165.0,
            vmax_ms: 30.0,
            rotor: None,
            power_table: None,
        }
    }
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<Instance> {
        let radio = RadioParams {
            bandwidth_hz: self.radio.bandwidth_mhz * 1e6,
            tx_power_w: self.radio.tx_power_w,
            ref_gain: db_to_linear(self.radio.ref_gain_db),
            noise_power_w: dbm_to_watts(self.radio.noise_dbm),
            altitude_m: self.radio.altitude_m,
        };
        let uav = UavPowerModel {
            speed: self.uav.speed_ms,
            propulsion_power: self.uav.pf_w,
            hover_power: self.uav.ph_w,
            max_speed: self.uav.vmax_ms,
            rotor: self.uav.rotor,
            power_table: match self.uav.power_table {
                Some(t) => t.into_iter().map(|[v, p]| (v, p)).collect(),
                None => DEFAULT_POWER_TABLE.to_vec(),
            },
        };
        let data_bits = self.data_mbits.iter().map(|m| m * 1e6).collect();
        Instance::new(self.depot, self.sensors, data_bits, radio, uav, self.d_th_m)
    }

    pub fn from_instance(inst: &Instance) -> Self {
        let table: Vec<[f64; 2]> = inst.uav.power_table.iter().map(|&(v, p)| [v, p]).collect();
        Self {
            depot: inst.depot,
            sensors: inst.sensors.clone(),
            data_mbits: inst.data_bits.iter().map(|b| b / 1e6).collect(),
            radio: RadioFile {
                bandwidth_mhz: inst.radio.bandwidth_hz / 1e6,
                tx_power_w: inst.radio.tx_power_w,
                ref_gain_db: 10.0 * inst.radio.ref_gain.log10(),
                noise_dbm: 10.0 * inst.radio.noise_power_w.log10() + 30.0,
                altitude_m: inst.radio.altitude_m,
            },
            uav: UavFile {
                speed_ms: inst.uav.speed,
                pf_w: inst.uav.propulsion_power,
                ph_w: inst.uav.hover_power,
                vmax_ms: inst.uav.max_speed,
                rotor: inst.uav.rotor.clone(),
                power_table: if inst.uav.power_table == DEFAULT_POWER_TABLE {
                    None
                } else {
                    Some(table)
                },
            },
            d_th_m: inst.coverage_radius,
        }
    }
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<InstanceFile>(text)?.into_instance()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from_instance(
            self,
        ))?)
    }
}
