//! Optimization variables: keyed values with manifold increments.
//!
//! Increments follow the same error-state conventions as the filter:
//! translations, velocities, and biases are additive; attitude increments are
//! right-multiplicative rotation-vector perturbations. `a.boxminus(&b)` is
//! the increment stepping from `b` to `a`.

use std::collections::BTreeMap;

use nalgebra::{DVector, DVectorView, Vector3};

use crate::ekf::state::NavState;

/// Identity of one optimization variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    /// IMU state of the radar scan with this index.
    State(u64),
    /// Persistent landmark by id.
    Landmark(u64),
}

/// Value of one variable.
#[derive(Clone, Debug)]
pub enum VarValue {
    /// Full 15-dof IMU state (position, attitude, velocity, biases).
    Nav(NavState),
    /// 3-dof point (landmark position in the navigation frame).
    Point(Vector3<f64>),
    /// Plain vector-space variable for generic/linear problems.
    Gen(DVector<f64>),
}

impl VarValue {
    pub fn dim(&self) -> usize {
        match self {
            VarValue::Nav(_) => 15,
            VarValue::Point(_) => 3,
            VarValue::Gen(v) => v.len(),
        }
    }

    /// Right increment `self ⊞ d`.
    pub fn boxplus(&self, d: DVectorView<'_, f64>) -> VarValue {
        assert_eq!(d.len(), self.dim(), "increment dimension mismatch");
        match self {
            VarValue::Nav(nav) => {
                let dp = Vector3::new(d[0], d[1], d[2]);
                let dth = Vector3::new(d[3], d[4], d[5]);
                let dv = Vector3::new(d[6], d[7], d[8]);
                let dba = Vector3::new(d[9], d[10], d[11]);
                let dbg = Vector3::new(d[12], d[13], d[14]);
                VarValue::Nav(NavState {
                    p: nav.p + dp,
                    q: nav.q.boxplus(&dth),
                    v: nav.v + dv,
                    ba: nav.ba + dba,
                    bg: nav.bg + dbg,
                })
            }
            VarValue::Point(p) => VarValue::Point(p + Vector3::new(d[0], d[1], d[2])),
            VarValue::Gen(v) => VarValue::Gen(v + DVector::from_column_slice(d.as_slice())),
        }
    }

    /// Increment such that `other ⊞ result = self` (to first order for the
    /// attitude component).
    pub fn boxminus(&self, other: &VarValue) -> DVector<f64> {
        match (self, other) {
            (VarValue::Nav(a), VarValue::Nav(b)) => {
                let mut d = DVector::zeros(15);
                d.fixed_rows_mut::<3>(0).copy_from(&(a.p - b.p));
                d.fixed_rows_mut::<3>(3).copy_from(&a.q.boxminus(&b.q));
                d.fixed_rows_mut::<3>(6).copy_from(&(a.v - b.v));
                d.fixed_rows_mut::<3>(9).copy_from(&(a.ba - b.ba));
                d.fixed_rows_mut::<3>(12).copy_from(&(a.bg - b.bg));
                d
            }
            (VarValue::Point(a), VarValue::Point(b)) => DVector::from_column_slice((a - b).as_slice()),
            (VarValue::Gen(a), VarValue::Gen(b)) => {
                assert_eq!(a.len(), b.len(), "boxminus dimension mismatch");
                a - b
            }
            _ => panic!("boxminus between mismatched variable kinds"),
        }
    }
}

/// Ordered set of variables with contiguous error-state offsets.
#[derive(Clone, Debug, Default)]
pub struct Values {
    entries: Vec<(VarKey, VarValue)>,
    index: BTreeMap<VarKey, usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl Values {
    pub fn new() -> Self {
        Values::default()
    }

    /// Appends a variable; keys must be unique.
    pub fn insert(&mut self, key: VarKey, value: VarValue) {
        assert!(
            !self.index.contains_key(&key),
            "duplicate variable {key:?}"
        );
        self.index.insert(key, self.entries.len());
        self.offsets.push(self.dim);
        self.dim += value.dim();
        self.entries.push((key, value));
    }

    pub fn get(&self, key: &VarKey) -> Option<&VarValue> {
        self.index.get(key).map(|&i| &self.entries[i].1)
    }

    pub fn contains(&self, key: &VarKey) -> bool {
        self.index.contains_key(key)
    }

    /// Error-state offset of a variable in the stacked system.
    pub fn offset_of(&self, key: &VarKey) -> Option<usize> {
        self.index.get(key).map(|&i| self.offsets[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total error-state dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(VarKey, VarValue)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &VarKey> {
        self.entries.iter().map(|(k, _)| k)
    }

    /// Applies a stacked increment to every variable.
    pub fn boxplus(&self, delta: &DVector<f64>) -> Values {
        assert_eq!(delta.len(), self.dim, "stacked increment dimension mismatch");
        let mut out = Values::new();
        for (i, (key, value)) in self.entries.iter().enumerate() {
            let at = self.offsets[i];
            out.insert(*key, value.boxplus(delta.rows(at, value.dim())));
        }
        out
    }

    /// Stacked increment from `other` to `self`; both must hold the same
    /// keys in the same order.
    pub fn boxminus(&self, other: &Values) -> DVector<f64> {
        assert_eq!(self.len(), other.len(), "boxminus over mismatched sets");
        let mut delta = DVector::zeros(self.dim);
        for (i, (key, value)) in self.entries.iter().enumerate() {
            let (okey, ovalue) = &other.entries[i];
            assert_eq!(key, okey, "boxminus over mismatched keys");
            delta
                .rows_mut(self.offsets[i], value.dim())
                .copy_from(&value.boxminus(ovalue));
        }
        delta
    }
}
