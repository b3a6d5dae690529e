use super::{Graph, Result, Tensor, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// differences at every coordinate of `x`.
///
/// `f` builds the function on a fresh graph from the leaf holding `x` and
/// returns the scalar output. The result is the maximum over coordinates
/// of `|g_analytic - g_numeric| / max(1, |g_numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, eps, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates, for inputs too
/// large to perturb exhaustively.
pub fn grad_check_coords<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let mut leaf = x.clone();
        leaf.zero_grad();
        let v = g.leaf(leaf.with_grad());
        let out = f(&mut g, v)?;
        g.backward(out)?;
        g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()])
    };

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(probe.clone());
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    probe.set_requires_grad(false);
    probe.zero_grad();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (hi - lo) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let f = |g: &mut Graph, v: Var| {
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new();
        let v = g.leaf(x.clone().with_grad());
        let out = f(&mut g, v).unwrap();
        g.backward(out).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[2.0, 4.0]);
        assert!(grad_check(f, &x, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn linear_layer_sum() {
        let w = Tensor::from_vec(vec![2, 3], vec![0.5, -1.0, 2.0, 0.25, 0.0, -3.0]).unwrap();
        let b = Tensor::from_vec(vec![2], vec![0.1, -0.1]).unwrap();
        let x = Tensor::from_vec(vec![3], vec![0.3, -0.7, 1.1]).unwrap();
        let f = |g: &mut Graph, v: Var| {
            let w = g.leaf(w.clone());
            let b = g.leaf(b.clone());
            let y = g.linear(v, w, b)?;
            Ok(g.sum(y))
        };
        assert!(grad_check(f, &x, 1e-5).unwrap() < 1e-6);
    }
}
