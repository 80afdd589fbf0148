//! Angular distance and b-pair invariant mass from node features.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::{EventGraph, Node, NodeKind};

static CLAMPED_RADICANDS: AtomicU64 = AtomicU64::new(0);

/// Number of invariant-mass evaluations whose radicand was clamped to zero.
pub fn clamped_mass_count() -> u64 {
    CLAMPED_RADICANDS.load(Ordering::Relaxed)
}

/// `a − b` wrapped into (−π, π].
pub fn wrapped_delta_phi(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % (2.0 * PI);
    if d <= -PI {
        d += 2.0 * PI;
    } else if d > PI {
        d -= 2.0 * PI;
    }
    d
}

/// `ΔR = √(Δη² + Δφ²)` with Δφ wrapped.
pub fn delta_r(a: &Node, b: &Node) -> f64 {
    let deta = a.eta() - b.eta();
    let dphi = wrapped_delta_phi(a.phi(), b.phi());
    deta.hypot(dphi)
}

/// Invariant mass of two massive objects given (pT, η, φ, m).
pub fn invariant_mass(a: &Node, b: &Node) -> f64 {
    let four = |n: &Node| {
        let (pt, eta, phi, m) = (n.pt(), n.eta(), n.phi(), n.mass());
        let pc = pt * eta.cosh();
        [
            (m * m + pc * pc).sqrt(),
            pt * phi.cos(),
            pt * phi.sin(),
            pt * eta.sinh(),
        ]
    };
    let (p, q) = (four(a), four(b));
    let e = p[0] + q[0];
    let (x, y, z) = (p[1] + q[1], p[2] + q[2], p[3] + q[3]);
    let radicand = e * e - (x * x + y * y + z * z);
    if radicand < 0.0 {
        CLAMPED_RADICANDS.fetch_add(1, Ordering::Relaxed);
        return 0.0;
    }
    radicand.sqrt()
}

pub fn delta_r_bb(event: &EventGraph) -> f64 {
    let (b1, b2) = b_pair(event);
    delta_r(b1, b2)
}

pub fn invariant_mass_bb(event: &EventGraph) -> f64 {
    let (b1, b2) = b_pair(event);
    invariant_mass(b1, b2)
}

fn b_pair(event: &EventGraph) -> (&Node, &Node) {
    // every validated event carries both b-jets
    (
        event.node(NodeKind::B1).expect("event has b1"),
        event.node(NodeKind::B2).expect("event has b2"),
    )
}
