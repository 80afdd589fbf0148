//! Synthetic signal/background events with qualitatively realistic kinematics.
//!
//! Signal b-jet pairs come from a Higgs-like resonance decayed isotropically in
//! its rest frame and boosted to the lab, so their invariant mass peaks at the
//! configured mass. Background b-jets are drawn independently (ttbar) or as a
//! hard/soft pair (single top), giving a broad b-pair mass. Signal missing
//! energy has an extra exponential tail from invisible particles.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, Exp, Gamma, Normal};

use super::{BackgroundKind, EventGraph, Label, Node, NodeKind, N_FEATURES};
use crate::{seeded_rng, Rng};

const MAX_JET_ETA: f64 = 2.5;
const MIN_JET_PT: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Resonance mass in GeV.
    pub higgs_mass: f64,
    /// Gaussian width of the resonance mass in GeV.
    pub higgs_width: f64,
    /// Probability that an event carries a third jet.
    pub third_jet_prob: f64,
    /// Mean of the extra exponential ETmiss tail in signal events (GeV).
    pub signal_met_tail: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            higgs_mass: 125.0,
            higgs_width: 15.0,
            third_jet_prob: 0.5,
            signal_met_tail: 40.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct FourMomentum {
    e: f64,
    px: f64,
    py: f64,
    pz: f64,
}

impl FourMomentum {
    fn from_pt_eta_phi_m(pt: f64, eta: f64, phi: f64, m: f64) -> Self {
        let pz = pt * eta.sinh();
        let p2 = pt * pt + pz * pz;
        Self {
            e: (p2 + m * m).sqrt(),
            px: pt * phi.cos(),
            py: pt * phi.sin(),
            pz,
        }
    }

    /// Boost by velocity `beta` (units of c).
    fn boost(self, beta: [f64; 3]) -> Self {
        let b2 = beta.iter().map(|b| b * b).sum::<f64>();
        if b2 == 0.0 {
            return self;
        }
        let gamma = 1.0 / (1.0 - b2).sqrt();
        let bp = beta[0] * self.px + beta[1] * self.py + beta[2] * self.pz;
        let k = (gamma - 1.0) * bp / b2 + gamma * self.e;
        Self {
            e: gamma * (self.e + bp),
            px: self.px + k * beta[0],
            py: self.py + k * beta[1],
            pz: self.pz + k * beta[2],
        }
    }

    fn pt(&self) -> f64 {
        self.px.hypot(self.py)
    }

    fn eta(&self) -> f64 {
        (self.pz / self.pt()).asinh()
    }

    fn phi(&self) -> f64 {
        wrap_phi(self.py.atan2(self.px))
    }
}

fn wrap_phi(phi: f64) -> f64 {
    let mut p = phi % (2.0 * PI);
    if p <= -PI {
        p += 2.0 * PI;
    } else if p > PI {
        p -= 2.0 * PI;
    }
    p
}

/// (pT, η, φ, mass) of one jet-like object.
#[derive(Clone, Copy, Debug)]
struct Jet {
    pt: f64,
    eta: f64,
    phi: f64,
    mass: f64,
}

struct Sampler {
    rng: Rng,
    config: GeneratorConfig,
}

impl Sampler {
    fn uniform_phi(&mut self) -> f64 {
        wrap_phi(self.rng.random_range(-PI..PI))
    }

    fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd).expect("valid normal").sample(&mut self.rng)
    }

    fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        Gamma::new(shape, scale).expect("valid gamma").sample(&mut self.rng)
    }

    fn exp(&mut self, mean: f64) -> f64 {
        Exp::new(1.0 / mean).expect("valid exp").sample(&mut self.rng)
    }

    fn beta(&mut self, a: f64, b: f64) -> f64 {
        Beta::new(a, b).expect("valid beta").sample(&mut self.rng)
    }

    fn truncated_normal(&mut self, mean: f64, sd: f64, limit: f64) -> f64 {
        loop {
            let x = self.normal(mean, sd);
            if x.abs() < limit {
                return x;
            }
        }
    }

    fn jet_mass(&mut self, mean: f64) -> f64 {
        self.normal(mean, 3.0).clamp(2.0, 40.0)
    }

    /// Two b-jets from a resonance decay, inside the detector acceptance.
    fn resonance_pair(&mut self) -> (Jet, Jet) {
        loop {
            let m1 = self.jet_mass(12.0);
            let m2 = self.jet_mass(12.0);
            let mass = self.normal(self.config.higgs_mass, self.config.higgs_width);
            if mass <= m1 + m2 + 1.0 {
                continue;
            }
            let pt = self.gamma(3.0, 50.0);
            let eta = self.normal(0.0, 1.0);
            let phi = self.uniform_phi();
            let parent = FourMomentum::from_pt_eta_phi_m(pt, eta, phi, mass);
            let beta = [parent.px / parent.e, parent.py / parent.e, parent.pz / parent.e];

            let pstar = ((mass * mass - (m1 + m2).powi(2)) * (mass * mass - (m1 - m2).powi(2)))
                .sqrt()
                / (2.0 * mass);
            let cos_t: f64 = self.rng.random_range(-1.0..1.0);
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            let az: f64 = self.rng.random_range(0.0..2.0 * PI);
            let dir = [sin_t * az.cos(), sin_t * az.sin(), cos_t];
            let d1 = FourMomentum {
                e: (pstar * pstar + m1 * m1).sqrt(),
                px: pstar * dir[0],
                py: pstar * dir[1],
                pz: pstar * dir[2],
            }
            .boost(beta);
            let d2 = FourMomentum {
                e: (pstar * pstar + m2 * m2).sqrt(),
                px: -pstar * dir[0],
                py: -pstar * dir[1],
                pz: -pstar * dir[2],
            }
            .boost(beta);
            let j1 = Jet {
                pt: d1.pt(),
                eta: d1.eta(),
                phi: d1.phi(),
                mass: m1,
            };
            let j2 = Jet {
                pt: d2.pt(),
                eta: d2.eta(),
                phi: d2.phi(),
                mass: m2,
            };
            if accepted(&j1) && accepted(&j2) {
                return (j1, j2);
            }
        }
    }

    fn independent_jet(&mut self, shape: f64, scale: f64, eta_sd: f64) -> Jet {
        Jet {
            pt: MIN_JET_PT + self.gamma(shape, scale),
            eta: self.truncated_normal(0.0, eta_sd, MAX_JET_ETA),
            phi: self.uniform_phi(),
            mass: self.jet_mass(10.0),
        }
    }

    fn event(&mut self, label: Label, background_kind: Option<BackgroundKind>) -> EventGraph {
        let (mut b1, mut b2) = match background_kind {
            None => self.resonance_pair(),
            Some(BackgroundKind::Ttbar) => (
                self.independent_jet(2.0, 80.0, 1.3),
                self.independent_jet(2.0, 80.0, 1.3),
            ),
            Some(BackgroundKind::Singletop) => (
                self.independent_jet(2.0, 90.0, 1.3),
                self.independent_jet(1.5, 30.0, 2.0),
            ),
        };
        if b2.pt > b1.pt {
            std::mem::swap(&mut b1, &mut b2);
        }
        let signal = label == Label::Signal;
        let (qa, qb) = if signal { (4.5, 1.3) } else { (2.0, 1.8) };
        let q1 = self.beta(qa, qb);
        let q2 = self.beta(qa, qb);

        let third = if self.rng.random::<f64>() < self.config.third_jet_prob {
            let eta_sd = if signal { 1.0 } else { 2.0 };
            Some((
                Jet {
                    pt: 25.0 + self.gamma(2.0, 15.0),
                    eta: self.truncated_normal(0.0, eta_sd, 4.5),
                    phi: self.uniform_phi(),
                    mass: 0.0,
                },
                self.beta(1.5, 3.0),
            ))
        } else {
            None
        };

        let lepton = Jet {
            pt: 25.0 + self.gamma(2.0, 20.0),
            eta: self.truncated_normal(0.0, 1.1, MAX_JET_ETA),
            phi: self.uniform_phi(),
            mass: 0.0,
        };
        let mut met = 20.0 + self.gamma(2.0, 30.0);
        if signal {
            met += self.exp(self.config.signal_met_tail);
        }
        let met_phi = self.uniform_phi();
        let scalar_sum = b1.pt + b2.pt + lepton.pt + third.map_or(0.0, |(j, _)| j.pt);
        let met_sig = (met / (0.5 * scalar_sum.sqrt())) * (1.0 + 0.1 * self.normal(0.0, 1.0)).max(0.2);

        let jet_row = |j: &Jet, q: f64| [j.pt, j.eta, j.phi, q, 0.0, 0.0];
        let b_row = |j: &Jet, q: f64| [j.pt, j.eta, j.phi, q, j.mass, 0.0];
        let mut nodes = vec![
            node(NodeKind::J1, jet_row(&b1, q1)),
            node(NodeKind::J2, jet_row(&b2, q2)),
        ];
        if let Some((j3, q3)) = third {
            nodes.push(node(NodeKind::J3, jet_row(&j3, q3)));
        }
        nodes.extend([
            node(NodeKind::B1, b_row(&b1, q1)),
            node(NodeKind::B2, b_row(&b2, q2)),
            node(NodeKind::Lepton, [lepton.pt, lepton.eta, lepton.phi, 0.0, 0.0, 0.0]),
            node(NodeKind::Energy, [met, 0.0, met_phi, 0.0, 0.0, met_sig]),
        ]);
        EventGraph {
            label,
            background_kind,
            nodes,
        }
    }
}

fn accepted(j: &Jet) -> bool {
    j.pt >= MIN_JET_PT && j.eta.abs() < MAX_JET_ETA
}

fn node(kind: NodeKind, features: [f64; N_FEATURES]) -> Node {
    Node { kind, features }
}

/// Generates `n_signal` signal and `n_background` background events (split
/// evenly between ttbar and single top, ttbar taking the odd one), shuffled.
pub fn generate_synthetic(n_signal: usize, n_background: usize, seed: u64) -> Vec<EventGraph> {
    generate_with(&GeneratorConfig::default(), n_signal, n_background, seed)
}

pub fn generate_with(
    config: &GeneratorConfig,
    n_signal: usize,
    n_background: usize,
    seed: u64,
) -> Vec<EventGraph> {
    let mut sampler = Sampler {
        rng: seeded_rng(seed),
        config: config.clone(),
    };
    let n_ttbar = n_background.div_ceil(2);
    let mut events = Vec::with_capacity(n_signal + n_background);
    for _ in 0..n_signal {
        events.push(sampler.event(Label::Signal, None));
    }
    for i in 0..n_background {
        let kind = if i < n_ttbar {
            BackgroundKind::Ttbar
        } else {
            BackgroundKind::Singletop
        };
        events.push(sampler.event(Label::Background, Some(kind)));
    }
    events.shuffle(&mut sampler.rng);
    events
}
