use super::{NumericsError, ParamId, ParamStore, Tape, Var};

/// Central-difference step used unless a caller overrides it.
pub const FD_STEP: f64 = 1e-5;

/// Relative errors are taken against `max(|analytic|, |numeric|, REL_FLOOR)`,
/// so entries with vanishing gradients are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of `build` against central differences for
/// every entry of every trainable variable. `build` must rebuild the same
/// scalar loss deterministically from the current store values.
///
/// The store's gradients are overwritten with the analytic gradient.
pub fn grad_check<F>(
    store: &mut ParamStore,
    build: F,
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, NumericsError>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let root = build(&mut tape, store)?;
    tape.backward(root, store)?;

    let eval = |store: &ParamStore| -> Result<f64, NumericsError> {
        let mut tape = Tape::no_grad();
        let root = build(&mut tape, store)?;
        tape.value(root).item().ok_or(NumericsError::NonScalarRoot {
            shape: tape.shape(root).to_vec(),
        })
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        for index in 0..store.value(id).len() {
            let original = store.value(id).data()[index];
            store.get_mut(id).value.data_mut()[index] = original + step;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[index] = original - step;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[index] = original;
            let numeric = (plus? - minus?) / (2.0 * step);
            let analytic = store.grad(id).data()[index];
            let rel = relative_error(analytic, numeric);
            report.entries += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tolerance {
                report.failures.push(GradMismatch {
                    param: store.get(id).name.clone(),
                    index,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap());
        let report = grad_check(
            &mut store,
            |tape, store| {
                let x = tape.param(store, w);
                let sq = tape.mul(x, x)?;
                tape.sum(sq)
            },
            1e-6,
            FD_STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.entries, 3);
    }

    #[test]
    fn unused_parameter_has_exactly_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::vector(vec![1.5]).unwrap());
        let unused = store.add("unused", Tensor::vector(vec![4.0, 2.0]).unwrap());
        let report = grad_check(
            &mut store,
            |tape, store| {
                let x = tape.param(store, used);
                let s = tape.sigmoid(x)?;
                tape.sum(s)
            },
            1e-6,
            FD_STEP,
        )
        .unwrap();
        assert!(report.passed());
        assert!(store.grad(unused).data().iter().all(|&g| g == 0.0));
    }
}
