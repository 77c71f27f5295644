//! Hypercube quantizer and the synchronized encoder/decoder state.
//!
//! Both sides keep `x̂` and a certified bound `d_e ≥ ‖x − x̂‖∞`. The bound is
//! stored as a value `δ` at a reference time `t_ref` and flowed on demand.

use thiserror::Error;

use crate::design::PlantSpec;
use crate::linalg::{mat_exp, vec_inf_norm, Matrix};
use crate::scalar::Scalar;

/// Largest packet payload in bits (the cell index is held in a `u128`).
pub const MAX_PAYLOAD_BITS: u32 = 128;

/// Relative slack for the hypercube membership test.
pub const CERT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("at least one bit per axis is required")]
    ZeroBits,
    #[error("n·p = {0} bits exceeds the {MAX_PAYLOAD_BITS}-bit payload limit")]
    PayloadTooWide(u32),
    #[error("cell index {index} out of range for n = {n}, p = {p}")]
    IndexOutOfRange { index: u128, n: usize, p: u32 },
    #[error("state lies outside the quantization hypercube (‖x − x̂‖∞ = {dist:e} > d_e = {de:e})")]
    OutsideHypercube { dist: f64, de: f64 },
    #[error("quantization bound must be positive and finite, got {0:e}")]
    BadBound(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("a packet is already in flight")]
    PacketInFlight,
    #[error("no packet is pending reception")]
    NoPacketInFlight,
    #[error("time runs backwards ({0:e})")]
    NegativeTime(f64),
    #[error("malformed wire packet: {0}")]
    Wire(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

fn check_width(n: usize, p: u32) -> Result<()> {
    if p == 0 {
        return Err(CodecError::ZeroBits);
    }
    let bits = n as u64 * p as u64;
    if bits > MAX_PAYLOAD_BITS as u64 {
        return Err(CodecError::PayloadTooWide(bits.min(u32::MAX as u64) as u32));
    }
    Ok(())
}

fn cell_mask(p: u32) -> u128 {
    if p >= 128 {
        u128::MAX
    } else {
        (1u128 << p) - 1
    }
}

fn check_bound<S: Scalar>(de: S) -> Result<()> {
    if de > S::zero() && de.is_finite() {
        Ok(())
    } else {
        Err(CodecError::BadBound(de.as_f64()))
    }
}

/// Index of the cell of `[x̂ − d_e, x̂ + d_e]ⁿ` (split into `2^p` intervals
/// per axis) that contains `x`. Boundaries go to the upper cell; the top
/// edge is clamped into the last one.
pub fn quantize<S: Scalar>(x: &[S], xhat: &[S], de: S, p: u32) -> Result<u128> {
    let n = x.len();
    if xhat.len() != n {
        return Err(CodecError::Dimension(format!("x has {n} entries, x̂ has {}", xhat.len())));
    }
    check_width(n, p)?;
    check_bound(de)?;
    let dist = x.iter().zip(xhat).fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
    if !(dist <= de * (S::one() + S::lit(CERT_TOL))) {
        return Err(CodecError::OutsideHypercube { dist: dist.as_f64(), de: de.as_f64() });
    }
    let cells = S::lit(2.0).powi(p as i32);
    let top = cell_mask(p);
    let mut index: u128 = 0;
    for (&xj, &cj) in x.iter().zip(xhat) {
        let raw = ((xj - cj + de) / (de + de) * cells).floor();
        let ij = if raw <= S::zero() { 0 } else { raw.to_u128().unwrap_or(top).min(top) };
        index = index.checked_shl(p).unwrap_or(0) | ij;
    }
    Ok(index)
}

/// Per-axis cell indices of a packed index, first axis first.
pub fn unpack_index(index: u128, n: usize, p: u32) -> Result<Vec<u128>> {
    check_width(n, p)?;
    let bits = n as u32 * p;
    if bits < 128 && index >> bits != 0 {
        return Err(CodecError::IndexOutOfRange { index, n, p });
    }
    let mask = cell_mask(p);
    Ok((0..n).rev().map(|j| index.checked_shr(j as u32 * p).unwrap_or(0) & mask).collect())
}

/// Centroid of the indexed cell.
pub fn dequantize<S: Scalar>(index: u128, xhat: &[S], de: S, p: u32) -> Result<Vec<S>> {
    check_bound(de)?;
    let axes = unpack_index(index, xhat.len(), p)?;
    let width = (de + de) / S::lit(2.0).powi(p as i32);
    Ok(axes
        .iter()
        .zip(xhat)
        .map(|(&i, &c)| c - de + (S::from_u128(i).expect("index fits the scalar range") + S::lit(0.5)) * width)
        .collect())
}

/// `e^{Āτ} x̂`.
pub fn controller_flow<S: Scalar>(xhat: &[S], tau: S, plant: &PlantSpec<S>) -> Result<Vec<S>> {
    if tau < S::zero() {
        return Err(CodecError::NegativeTime(tau.as_f64()));
    }
    let e = mat_exp(plant.abar(), tau).map_err(|e| CodecError::Dimension(e.to_string()))?;
    Ok(e.mul_vec(xhat))
}

/// `‖e^{Aτ}‖∞ δ + (ν/‖A‖)(e^{‖A‖τ} − 1)`.
pub fn de_flow<S: Scalar>(delta: S, tau: S, plant: &PlantSpec<S>) -> Result<S> {
    if tau < S::zero() {
        return Err(CodecError::NegativeTime(tau.as_f64()));
    }
    Ok(plant.de_flow(delta, tau))
}

/// One encoded transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet<S> {
    pub index: u128,
    /// Bits per axis.
    pub p: u32,
    /// State dimension.
    pub n: usize,
    pub t_send: S,
    pub t_receive: S,
}

impl<S: Scalar> Packet<S> {
    /// Payload size `n·p` in bits.
    pub fn bits(&self) -> u32 {
        self.n as u32 * self.p
    }

    pub fn delay(&self) -> S {
        self.t_receive - self.t_send
    }

    /// One byte carrying `p`, then the index big-endian in `⌈n·p/8⌉` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let len = (self.bits() as usize).div_ceil(8);
        let mut out = Vec::with_capacity(1 + len);
        out.push(self.p as u8);
        out.extend_from_slice(&self.index.to_be_bytes()[16 - len..]);
        out
    }

    /// Parses [`Packet::to_bytes`] output; timing comes from the shared clock.
    pub fn from_bytes(bytes: &[u8], n: usize, t_send: S, t_receive: S) -> Result<Self> {
        let (&p, body) = bytes.split_first().ok_or_else(|| CodecError::Wire("empty packet".into()))?;
        let p = p as u32;
        check_width(n, p)?;
        let len = (n * p as usize).div_ceil(8);
        if body.len() != len {
            return Err(CodecError::Wire(format!("expected {len} payload bytes, got {}", body.len())));
        }
        let mut buf = [0u8; 16];
        buf[16 - len..].copy_from_slice(body);
        let index = u128::from_be_bytes(buf);
        unpack_index(index, n, p)?;
        if t_receive < t_send {
            return Err(CodecError::NegativeTime((t_receive - t_send).as_f64()));
        }
        Ok(Self { index, p, n, t_send, t_receive })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

/// State of one side of the codec.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecState<S> {
    xhat: Vec<S>,
    /// Bound value at `t_ref`.
    delta: S,
    t_ref: S,
    /// Encoder only: `x̂(t_k⁻)` of the packet in flight.
    zk: Option<Vec<S>>,
    in_flight: Option<Packet<S>>,
    last_received: Option<S>,
}

impl<S: Scalar> CodecState<S> {
    pub fn new(xhat0: Vec<S>, de0: S, t0: S) -> Result<Self> {
        if !(de0 >= S::zero()) || !de0.is_finite() {
            return Err(CodecError::BadBound(de0.as_f64()));
        }
        Ok(Self { xhat: xhat0, delta: de0, t_ref: t0, zk: None, in_flight: None, last_received: None })
    }

    pub fn xhat(&self) -> &[S] {
        &self.xhat
    }

    /// `δ` at the reference time.
    pub fn delta(&self) -> S {
        self.delta
    }

    pub fn t_ref(&self) -> S {
        self.t_ref
    }

    pub fn stored_zk(&self) -> Option<&[S]> {
        self.zk.as_deref()
    }

    pub fn in_flight(&self) -> Option<&Packet<S>> {
        self.in_flight.as_ref()
    }

    /// Certified bound `d_e(t)` for `t ≥ t_ref`.
    pub fn de_at(&self, t: S, plant: &PlantSpec<S>) -> S {
        plant.de_flow(self.delta, t - self.t_ref)
    }

    /// `x̂ ← Φ x̂` for a precomputed propagator `Φ = e^{Āh}`.
    pub fn flow_with(&mut self, propagator: &Matrix<S>) {
        self.xhat = propagator.mul_vec(&self.xhat);
    }

    /// Encodes `x` at `t_k` with `p_k` bits per axis; the packet arrives at
    /// `t_k + delay`.
    pub fn encoder_transmit(&mut self, x: &[S], t_k: S, p_k: u32, delay: S, plant: &PlantSpec<S>) -> Result<Packet<S>> {
        if self.in_flight.is_some() {
            return Err(CodecError::PacketInFlight);
        }
        if p_k == 0 {
            return Err(CodecError::ZeroBits);
        }
        if t_k < self.t_ref {
            return Err(CodecError::NegativeTime((t_k - self.t_ref).as_f64()));
        }
        if !(delay >= S::zero()) {
            return Err(CodecError::NegativeTime(delay.as_f64()));
        }
        let de_minus = self.de_at(t_k, plant);
        let index = quantize(x, &self.xhat, de_minus, p_k)?;
        let packet = Packet { index, p: p_k, n: x.len(), t_send: t_k, t_receive: t_k + delay };
        self.zk = Some(self.xhat.clone());
        self.in_flight = Some(packet.clone());
        Ok(packet)
    }

    /// `δ_k = d_e(t_k⁻)/2^{p_k}` for the packet in flight (encoder side).
    pub fn pending_delta(&self, plant: &PlantSpec<S>) -> Option<S> {
        self.in_flight.as_ref().map(|pk| self.de_at(pk.t_send, plant) / S::lit(2.0).powi(pk.p as i32))
    }

    /// Applies the reception jump at `packet.t_receive`.
    ///
    /// Both sides rebuild `x̂(t_k⁻)` by flowing the current estimate back over
    /// the delay, so their post-jump states agree bit for bit.
    pub fn apply_reception(&mut self, packet: &Packet<S>, side: Side, plant: &PlantSpec<S>) -> Result<()> {
        match side {
            Side::Encoder => match &self.in_flight {
                Some(pending) if pending == packet => {}
                _ => return Err(CodecError::NoPacketInFlight),
            },
            Side::Decoder => {
                let stale = packet.t_send < self.t_ref || self.last_received.is_some_and(|t| packet.t_send <= t);
                if stale {
                    return Err(CodecError::NoPacketInFlight);
                }
            }
        }
        let delay = packet.delay();
        if delay < S::zero() {
            return Err(CodecError::NegativeTime(delay.as_f64()));
        }
        let de_minus = self.de_at(packet.t_send, plant);
        let delta_k = de_minus / S::lit(2.0).powi(packet.p as i32);
        if delay == S::zero() {
            self.xhat = dequantize(packet.index, &self.xhat, de_minus, packet.p)?;
        } else {
            let lin = |e| CodecError::Dimension(format!("{e}"));
            let back = mat_exp(plant.abar(), -delay).map_err(lin)?;
            let zk = back.mul_vec(&self.xhat);
            let zd = dequantize(packet.index, &zk, de_minus, packet.p)?;
            let fwd_bar = mat_exp(plant.abar(), delay).map_err(lin)?;
            let fwd = mat_exp(plant.a(), delay).map_err(lin)?;
            let diff: Vec<S> = zd.iter().zip(&zk).map(|(&a, &b)| a - b).collect();
            let lhs = fwd_bar.mul_vec(&zk);
            let rhs = fwd.mul_vec(&diff);
            self.xhat = lhs.iter().zip(&rhs).map(|(&a, &b)| a + b).collect();
        }
        self.delta = delta_k;
        self.t_ref = packet.t_send;
        self.last_received = Some(packet.t_send);
        self.in_flight = None;
        self.zk = None;
        Ok(())
    }

    /// `‖x − x̂‖∞`.
    pub fn error_inf(&self, x: &[S]) -> S {
        vec_inf_norm(&crate::linalg::vec_sub(x, &self.xhat))
    }

    /// Bitwise equality of the shared variables (`x̂`, `δ`, `t_ref`).
    pub fn same_shared_state(&self, other: &Self) -> bool {
        let bits = |v: S| v.as_f64().to_bits();
        self.xhat.len() == other.xhat.len()
            && self.xhat.iter().zip(&other.xhat).all(|(&a, &b)| bits(a) == bits(b))
            && bits(self.delta) == bits(other.delta)
            && bits(self.t_ref) == bits(other.t_ref)
    }
}
