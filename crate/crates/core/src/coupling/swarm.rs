//! Second class particles between two ordered configurations and one tagged
//! member of them.
//!
//! Particles are labelled left to right by m_i = (Σ_{j<=i} d_j) - 1 where
//! d = upper - lower. Only the tagged particle is followed; the labels of
//! the others are implied by the net second-class flux through each edge.

use super::CouplingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tag {
    /// Unwrapped position on Z.
    pub position: i64,
    pub label: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagStart {
    /// First site i >= 0 holding a second class particle.
    FirstAtOrAfterOrigin,
    /// Last site i <= 0 holding a second class particle.
    LastAtOrBeforeOrigin,
    Untagged,
}

#[derive(Debug, Clone)]
pub struct LabeledSwarm {
    len: usize,
    n_total: i64,
    m0: Vec<i64>,
    j2nd: Vec<i64>,
    tag: Option<Tag>,
}

/// A single second class particle is a swarm of size one.
pub type DefectTracer = LabeledSwarm;

impl LabeledSwarm {
    pub fn new(lower: &[i64], upper: &[i64], start: TagStart) -> Result<Self, CouplingError> {
        let len = lower.len();
        if upper.len() != len {
            return Err(CouplingError::InvalidConfiguration("length mismatch".into()));
        }
        let mut m0 = Vec::with_capacity(len);
        let mut acc = -1;
        for i in 0..len {
            let d = upper[i] - lower[i];
            if d < 0 {
                return Err(CouplingError::StochasticOrderViolation(format!(
                    "site {i}: lower {} > upper {}",
                    lower[i], upper[i]
                )));
            }
            acc += d;
            m0.push(acc);
        }
        let mut s = LabeledSwarm { len, n_total: acc + 1, m0, j2nd: vec![0; len], tag: None };
        let d = |i: usize| upper[i] - lower[i];
        s.tag = match start {
            TagStart::Untagged => None,
            _ if s.n_total == 0 => return Err(CouplingError::NoSecondClassParticles),
            TagStart::FirstAtOrAfterOrigin => {
                let p = (0..len).find(|&i| d(i) > 0).unwrap() as i64;
                Some(Tag { position: p, label: s.m(p - 1) + 1 })
            }
            TagStart::LastAtOrBeforeOrigin => {
                let p = (0..len as i64).map(|k| -k).find(|&i| d(s.ring(i)) > 0).unwrap();
                Some(Tag { position: p, label: s.m(p) })
            }
        };
        Ok(s)
    }

    #[inline]
    fn ring(&self, i: i64) -> usize {
        i.rem_euclid(self.len as i64) as usize
    }

    /// Largest label at or left of unwrapped site i.
    pub fn m(&self, i: i64) -> i64 {
        let r = self.ring(i);
        self.m0[r] - self.j2nd[r] + i.div_euclid(self.len as i64) * self.n_total
    }

    pub fn total(&self) -> i64 {
        self.n_total
    }

    pub fn tag(&self) -> Option<Tag> {
        self.tag
    }

    pub fn position(&self) -> Option<i64> {
        self.tag.map(|t| t.position)
    }

    pub fn tagged_site(&self) -> Option<usize> {
        self.tag.map(|t| self.ring(t.position))
    }

    /// Net second-class flux to the right through edge (i, i+1).
    pub fn j2nd(&self, edge: usize) -> i64 {
        self.j2nd[edge]
    }

    /// A second class particle jumps from ring site `src`. `carried` says
    /// whether it is the tagged one when the tag sits on `src`.
    pub fn jump(&mut self, src: usize, right: bool, carried: bool) {
        let n = self.len;
        let edge = if right { src } else { (src + n - 1) % n };
        let on_tag = self.tagged_site() == Some(src);
        if !on_tag {
            if right {
                self.j2nd[edge] += 1;
            } else {
                self.j2nd[edge] -= 1;
            }
            return;
        }
        let mut tag = self.tag.unwrap();
        let p = tag.position;
        if right {
            let top = self.m(p);
            self.j2nd[edge] += 1;
            if carried {
                tag = Tag { position: p + 1, label: top };
            } else {
                tag.label = tag.label.min(self.m(p));
            }
        } else {
            let bottom = self.m(p - 1) + 1;
            self.j2nd[edge] -= 1;
            if carried {
                tag = Tag { position: p - 1, label: bottom };
            } else {
                tag.label = tag.label.max(self.m(p - 1) + 1);
            }
        }
        self.tag = Some(tag);
    }

    /// Label bookkeeping agrees with the configurations.
    pub fn consistent(&self, lower: &[i64], upper: &[i64]) -> bool {
        let n = self.len as i64;
        let counts_ok = (0..n).all(|i| self.m(i) - self.m(i - 1) == upper[i as usize] - lower[i as usize]);
        let tag_ok = self.tag.is_none_or(|t| self.m(t.position - 1) < t.label && t.label <= self.m(t.position));
        counts_ok && tag_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_starts() {
        let lower = vec![0, 0, 0, 0, 0, 0];
        let upper = vec![0, 2, 0, 1, 0, 1];
        let s = LabeledSwarm::new(&lower, &upper, TagStart::FirstAtOrAfterOrigin).unwrap();
        assert_eq!(s.total(), 4);
        assert_eq!(s.tag(), Some(Tag { position: 1, label: 0 }));
        assert_eq!(s.m(-1), -1);
        assert_eq!(s.m(5), 3);
        assert_eq!(s.m(7), 4 + 1);
        let s = LabeledSwarm::new(&lower, &upper, TagStart::LastAtOrBeforeOrigin).unwrap();
        assert_eq!(s.tag(), Some(Tag { position: -1, label: -1 }));
        assert!(s.consistent(&lower, &upper));
        assert!(LabeledSwarm::new(&lower, &lower, TagStart::FirstAtOrAfterOrigin).is_err());
        assert!(LabeledSwarm::new(&upper, &lower, TagStart::Untagged).is_err());
    }

    #[test]
    fn jumps_keep_labels_consistent() {
        let lower = vec![0; 5];
        let mut upper = vec![2, 0, 1, 0, 0];
        let mut s = LabeledSwarm::new(&lower, &upper, TagStart::FirstAtOrAfterOrigin).unwrap();
        // non-carrying right jump from the tagged site
        upper[0] -= 1;
        upper[1] += 1;
        s.jump(0, true, false);
        assert!(s.consistent(&lower, &upper));
        assert_eq!(s.position(), Some(0));
        // carrying right jump
        upper[0] -= 1;
        upper[1] += 1;
        s.jump(0, true, true);
        assert_eq!(s.position(), Some(1));
        assert!(s.consistent(&lower, &upper));
        // left jump across the seam from site 0 to site 4
        upper[1] -= 1;
        upper[0] += 1;
        s.jump(1, false, true);
        upper[0] -= 1;
        upper[4] += 1;
        s.jump(0, false, true);
        assert_eq!(s.position(), Some(-1));
        assert!(s.consistent(&lower, &upper));
        assert_eq!(s.j2nd(4), -1);
    }
}
