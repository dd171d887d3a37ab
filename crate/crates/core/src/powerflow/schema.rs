use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Network;

/// A single measurement channel. Bus locations are internal bus indices;
/// flow locations are indices into the case branch list, measured at the
/// from end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "at")]
pub enum Channel {
    PInj(usize),
    QInj(usize),
    PFlow(usize),
    QFlow(usize),
    VMag(usize),
}

impl Channel {
    pub fn is_bus_channel(&self) -> bool {
        matches!(self, Channel::PInj(_) | Channel::QInj(_) | Channel::VMag(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSchema {
    channels: Vec<Channel>,
    labels: Vec<String>,
}

impl MeasurementSchema {
    pub fn new(net: &Network, channels: Vec<Channel>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(channels.len());
        for ch in &channels {
            if !seen.insert(*ch) {
                return Err(Error::Config(format!("duplicate channel {ch:?}")));
            }
            match *ch {
                Channel::PInj(i) | Channel::QInj(i) | Channel::VMag(i) if i >= net.n() => {
                    return Err(Error::Config(format!("channel {ch:?} references a missing bus")));
                }
                Channel::PFlow(b) | Channel::QFlow(b) => {
                    if net.two_ports.get(b).copied().flatten().is_none() {
                        return Err(Error::Config(format!(
                            "channel {ch:?} references a missing or out-of-service branch"
                        )));
                    }
                }
                _ => {}
            }
        }
        let labels = channels.iter().map(|ch| label(net, ch)).collect();
        Ok(Self { channels, labels })
    }

    /// All bus P injections, all bus Q injections, from-end P and Q flows of
    /// every in-service branch, then all bus voltage magnitudes.
    pub fn default_schema(net: &Network) -> Self {
        let n = net.n();
        let branches: Vec<usize> = net.case.in_service_branches().map(|(i, _)| i).collect();
        let mut channels = Vec::with_capacity(3 * n + 2 * branches.len());
        channels.extend((0..n).map(Channel::PInj));
        channels.extend((0..n).map(Channel::QInj));
        channels.extend(branches.iter().map(|&b| Channel::PFlow(b)));
        channels.extend(branches.iter().map(|&b| Channel::QFlow(b)));
        channels.extend((0..n).map(Channel::VMag));
        Self::new(net, channels).expect("default schema is valid by construction")
    }

    /// Bus active-power injections only (the meter universe of the
    /// limited-meter study).
    pub fn p_injection_only(net: &Network) -> Self {
        Self::new(net, (0..net.n()).map(Channel::PInj).collect()).expect("valid by construction")
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn position(&self, channel: Channel) -> Option<usize> {
        self.channels.iter().position(|&c| c == channel)
    }

    /// Same channels in a different order: `order[j]` is the old position of new channel `j`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            channels: order.iter().map(|&j| self.channels[j]).collect(),
            labels: order.iter().map(|&j| self.labels[j].clone()).collect(),
        }
    }

    /// Short stable digest of the channel labels, recorded in experiment metadata.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for l in &self.labels {
            hasher.update(l.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

fn label(net: &Network, ch: &Channel) -> String {
    let bus = |i: usize| net.case.buses[i].id;
    let branch = |b: usize| {
        let br = &net.case.branches[b];
        format!("{}:{}-{}", b + 1, bus(br.from_bus), bus(br.to_bus))
    };
    match *ch {
        Channel::PInj(i) => format!("P_inj:{}", bus(i)),
        Channel::QInj(i) => format!("Q_inj:{}", bus(i)),
        Channel::PFlow(b) => format!("P_flow:{}", branch(b)),
        Channel::QFlow(b) => format!("Q_flow:{}", branch(b)),
        Channel::VMag(i) => format!("V_mag:{}", bus(i)),
    }
}

impl fmt::Display for MeasurementSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} channels [{}]", self.len(), self.hash())
    }
}
