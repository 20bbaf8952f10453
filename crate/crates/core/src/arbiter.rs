//! Priority arbitration between compliance directives.
//!
//! Each law has a priority `base * exp(-tau / 2)` where the base follows the
//! law category (distance, road right, speed, behavior) and `tau` is zero for
//! laws that need no trigger and one for triggered laws. Directives on the
//! same variable are merged greedily in descending priority; a directive that
//! conflicts with what has been merged so far is dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::laws::Law;
use crate::strategy::{ComplianceDirective, Interval, Variable};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Distance,
    RoadRight,
    Speed,
    Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityModel {
    pub distance: f64,
    pub road_right: f64,
    pub speed: f64,
    pub behavior: f64,
    /// Time constant of the trigger discount.
    pub tau_scale: f64,
}

impl Default for PriorityModel {
    fn default() -> Self {
        Self { distance: 4.0, road_right: 3.0, speed: 2.0, behavior: 1.0, tau_scale: 2.0 }
    }
}

pub fn category(law: Law) -> Category {
    match law {
        Law::A | Law::B | Law::G => Category::Speed,
        Law::C => Category::Distance,
        Law::D | Law::E => Category::RoadRight,
        Law::F => Category::Behavior,
    }
}

impl PriorityModel {
    pub fn base(&self, c: Category) -> f64 {
        match c {
            Category::Distance => self.distance,
            Category::RoadRight => self.road_right,
            Category::Speed => self.speed,
            Category::Behavior => self.behavior,
        }
    }

    pub fn priority(&self, law: Law) -> f64 {
        let tau = if law.is_triggered() { 1.0 } else { 0.0 };
        self.base(category(law)) * (-tau / self.tau_scale).exp()
    }
}

/// Priority under the default model.
pub fn priority_of(law: Law) -> f64 {
    PriorityModel::default().priority(law)
}

/// Merged directive for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub reference: Option<f64>,
    pub constraint: Option<Interval>,
    /// Highest-priority contributor.
    pub winner: Law,
    /// All contributing laws, in merge order.
    pub sources: Vec<Law>,
    /// Laws whose directives were dropped.
    pub overridden: Vec<Law>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlan {
    pub variables: BTreeMap<Variable, Resolved>,
}

impl ResolvedPlan {
    pub fn get(&self, v: Variable) -> Option<&Resolved> {
        self.variables.get(&v)
    }

    pub fn reference(&self, v: Variable) -> Option<f64> {
        self.get(v).and_then(|r| r.reference)
    }

    pub fn constraint(&self, v: Variable) -> Option<Interval> {
        self.get(v).and_then(|r| r.constraint)
    }

    pub fn winner(&self, v: Variable) -> Option<Law> {
        self.get(v).map(|r| r.winner)
    }

    /// Laws whose directives were overridden on any variable.
    pub fn overridden(&self) -> impl Iterator<Item = Law> + '_ {
        self.variables.values().flat_map(|r| r.overridden.iter().copied())
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }
}

fn sanitized(d: &ComplianceDirective) -> (Option<f64>, Option<Interval>) {
    let c = d.constraint.map(|c| if c.lo <= c.hi { c } else { Interval::new(c.hi, c.lo) });
    let r = match (d.reference, c) {
        (Some(r), Some(c)) => Some(c.clamp(r)),
        (r, _) => r,
    };
    (r, c)
}

/// Resolves directives with the default priority model.
pub fn resolve(directives: &[ComplianceDirective]) -> ResolvedPlan {
    resolve_with(directives, &PriorityModel::default())
}

pub fn resolve_with(directives: &[ComplianceDirective], model: &PriorityModel) -> ResolvedPlan {
    let mut order: Vec<&ComplianceDirective> = directives.iter().collect();
    order.sort_by(|a, b| {
        model
            .priority(b.source)
            .total_cmp(&model.priority(a.source))
            .then(a.source.cmp(&b.source))
            .then(a.variable.cmp(&b.variable))
            .then(a.reference.unwrap_or(f64::NAN).total_cmp(&b.reference.unwrap_or(f64::NAN)))
            .then(
                a.constraint
                    .map_or(f64::NAN, |c| c.lo)
                    .total_cmp(&b.constraint.map_or(f64::NAN, |c| c.lo)),
            )
            .then(
                a.constraint
                    .map_or(f64::NAN, |c| c.hi)
                    .total_cmp(&b.constraint.map_or(f64::NAN, |c| c.hi)),
            )
    });

    let mut plan = ResolvedPlan::default();
    for d in order {
        let (r, c) = sanitized(d);
        match plan.variables.get_mut(&d.variable) {
            None => {
                plan.variables.insert(
                    d.variable,
                    Resolved { reference: r, constraint: c, winner: d.source, sources: vec![d.source], overridden: vec![] },
                );
            }
            Some(acc) => {
                let reference_ok = match (acc.reference, r) {
                    (Some(a), Some(b)) => (a - b).abs() <= TOL,
                    _ => true,
                };
                let merged_c = match (acc.constraint, c) {
                    (Some(a), Some(b)) => {
                        let lo = a.lo.max(b.lo);
                        let hi = a.hi.min(b.hi);
                        (lo <= hi + TOL).then(|| Some(Interval::new(lo, hi.max(lo))))
                    }
                    (a, b) => Some(a.or(b)),
                };
                let merged_r = acc.reference.or(r);
                let ok = reference_ok
                    && match merged_c {
                        None => false,
                        Some(mc) => merged_r.is_none_or(|v| mc.is_none_or(|c| c.contains(v, TOL))),
                    };
                if ok {
                    acc.reference = merged_r;
                    acc.constraint = merged_c.flatten();
                    if !acc.sources.contains(&d.source) {
                        acc.sources.push(d.source);
                    }
                } else if !acc.overridden.contains(&d.source) {
                    acc.overridden.push(d.source);
                }
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn speed(law: Law, r: Option<f64>, c: Option<(f64, f64)>) -> ComplianceDirective {
        ComplianceDirective::new(Variable::Speed, r, c.map(|(a, b)| Interval::new(a, b)), law)
    }

    #[test]
    fn priority_values() {
        let p = |l| priority_of(l);
        assert_eq!(p(Law::C), 4.0);
        assert_eq!(p(Law::A), 2.0);
        assert_eq!(p(Law::B), 2.0);
        assert!((p(Law::D) - 1.81959).abs() < 1e-5);
        assert!((p(Law::E) - 1.81959).abs() < 1e-5);
        assert!((p(Law::G) - 1.21306).abs() < 1e-5);
        assert!((p(Law::F) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn following_beats_overtaking_speed() {
        let plan = resolve(&[speed(Law::G, Some(35.0), None), speed(Law::C, Some(19.0), None)]);
        assert_eq!(plan.reference(Variable::Speed), Some(19.0));
        assert_eq!(plan.winner(Variable::Speed), Some(Law::C));
        assert_eq!(plan.overridden().collect::<Vec<_>>(), vec![Law::G]);
    }

    #[test]
    fn compatible_directives_merge() {
        let lat = ComplianceDirective::new(Variable::LateralPosition, Some(1.875), Some(Interval::new(0.9, 2.85)), Law::D);
        let plan = resolve(&[speed(Law::A, Some(22.0), None), lat.clone()]);
        assert_eq!(plan.reference(Variable::Speed), Some(22.0));
        assert_eq!(plan.reference(Variable::LateralPosition), Some(1.875));

        let plan = resolve(&[speed(Law::A, None, Some((22.0, 33.0))), speed(Law::C, Some(25.0), None)]);
        assert_eq!(plan.reference(Variable::Speed), Some(25.0));
        assert_eq!(plan.constraint(Variable::Speed), Some(Interval::new(22.0, 33.0)));

        // reference outside a higher-priority constraint is dropped
        let plan = resolve(&[speed(Law::B, None, Some((22.0, 33.0))), speed(Law::G, Some(40.0), Some((40.0, 41.0)))]);
        assert_eq!(plan.reference(Variable::Speed), None);
        assert_eq!(plan.overridden().collect::<Vec<_>>(), vec![Law::G]);
    }

    #[test]
    fn ties_follow_letter_order() {
        let plan = resolve(&[speed(Law::B, Some(33.0), None), speed(Law::A, Some(22.0), None)]);
        assert_eq!(plan.winner(Variable::Speed), Some(Law::A));
        assert_eq!(plan.reference(Variable::Speed), Some(22.0));
    }

    fn directive() -> impl Strategy<Value = ComplianceDirective> {
        (0usize..7, any::<bool>(), proptest::option::of(0.0..40.0f64), proptest::option::of((0.0..40.0f64, 0.0..10.0f64)))
            .prop_map(|(l, lat, r, c)| {
                let c = c.map(|(lo, w)| Interval::new(lo, lo + w));
                let r = match (r, c) {
                    (Some(r), Some(c)) => Some(c.clamp(r)),
                    (r, _) => r,
                };
                let v = if lat { Variable::LateralPosition } else { Variable::Speed };
                ComplianceDirective::new(v, r, c, Law::ALL[l])
            })
    }

    proptest! {
        #[test]
        fn permutation_invariant(ds in proptest::collection::vec(directive(), 0..8), seed in any::<u64>()) {
            let mut shuffled = ds.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(resolve(&ds), resolve(&shuffled));
        }

        #[test]
        fn lower_priority_conflict_never_changes_plan(ds in proptest::collection::vec(directive(), 1..6), extra in directive()) {
            let plan = resolve(&ds);
            let p_extra = priority_of(extra.source);
            let strictly_lower = ds.iter().all(|d| priority_of(d.source) > p_extra + 1e-12);
            let mut with = ds.clone();
            with.push(extra.clone());
            let plan2 = resolve(&with);
            if strictly_lower {
                for (v, r) in &plan.variables {
                    let r2 = plan2.get(*v).unwrap();
                    if *v != extra.variable || !r2.sources.contains(&extra.source) {
                        prop_assert_eq!(r2.reference, r.reference);
                        prop_assert_eq!(r2.constraint, r.constraint);
                        prop_assert_eq!(r2.winner, r.winner);
                    } else {
                        // merged: compatible with everything already there
                        if let Some(x) = r.reference {
                            prop_assert_eq!(r2.reference, Some(x));
                        }
                    }
                }
            }
        }

        #[test]
        fn reference_inside_constraint(ds in proptest::collection::vec(directive(), 0..8)) {
            let plan = resolve(&ds);
            for r in plan.variables.values() {
                if let (Some(v), Some(c)) = (r.reference, r.constraint) {
                    prop_assert!(c.contains(v, 1e-6));
                }
            }
        }
    }
}
