//! Nelder-Mead simplex search with box constraints enforced by projection.

#[derive(Debug, Clone)]
pub struct SimplexOutcome<const N: usize> {
    pub x: [f64; N],
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexSettings<const N: usize> {
    pub lower: [f64; N],
    pub upper: [f64; N],
    pub steps: [f64; N],
    pub max_iterations: usize,
    /// Stop once `max f - min f` over the simplex falls below this.
    pub tolerance: f64,
}

fn project<const N: usize>(x: &mut [f64; N], lower: &[f64; N], upper: &[f64; N]) {
    for i in 0..N {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Minimise `f` from `start`. The returned point never has a higher objective
/// than the (projected) start.
pub fn minimize<const N: usize>(
    mut f: impl FnMut(&[f64; N]) -> f64,
    start: [f64; N],
    settings: &SimplexSettings<N>,
) -> SimplexOutcome<N> {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let SimplexSettings {
        lower,
        upper,
        steps,
        max_iterations,
        tolerance,
    } = *settings;

    let mut x0 = start;
    project(&mut x0, &lower, &upper);
    let mut vertices: Vec<[f64; N]> = Vec::with_capacity(N + 1);
    vertices.push(x0);
    for i in 0..N {
        let mut v = x0;
        v[i] += steps[i];
        if v[i] > upper[i] {
            // step inward when the start sits on the upper face
            v[i] = x0[i] - steps[i];
        }
        project(&mut v, &lower, &upper);
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(&mut f).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iterations {
        let mut order: Vec<usize> = (0..=N).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        vertices = order.iter().map(|&i| vertices[i]).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if values[N] - values[0] < tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = [0.0; N];
        for v in &vertices[..N] {
            for i in 0..N {
                centroid[i] += v[i] / N as f64;
            }
        }
        let along = |t: f64, from: &[f64; N]| {
            let mut p = [0.0; N];
            for i in 0..N {
                p[i] = centroid[i] + t * (centroid[i] - from[i]);
            }
            project(&mut p, &lower, &upper);
            p
        };

        let worst = vertices[N];
        let reflected = along(REFLECT, &worst);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(EXPAND, &worst);
            let fe = f(&expanded);
            if fe < fr {
                vertices[N] = expanded;
                values[N] = fe;
            } else {
                vertices[N] = reflected;
                values[N] = fr;
            }
            continue;
        }
        if fr < values[N - 1] {
            vertices[N] = reflected;
            values[N] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[N] {
            let c = along(CONTRACT * REFLECT, &worst);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = along(-CONTRACT, &worst);
            let fc = f(&c);
            (c, fc)
        };
        if fc < values[N].min(fr) {
            vertices[N] = contracted;
            values[N] = fc;
            continue;
        }
        let best = vertices[0];
        for k in 1..=N {
            for i in 0..N {
                vertices[k][i] = best[i] + SHRINK * (vertices[k][i] - best[i]);
            }
            values[k] = f(&vertices[k]);
        }
    }

    let best = (0..=N)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex is non-empty");
    SimplexOutcome {
        x: vertices[best],
        fx: values[best],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> SimplexSettings<2> {
        SimplexSettings {
            lower: [-10.0, -10.0],
            upper: [10.0, 10.0],
            steps: [0.5, 0.5],
            max_iterations: 2000,
            tolerance: 1e-14,
        }
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let rosen = |x: &[f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let out = minimize(rosen, [-1.2, 1.0], &settings());
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-3, "{:?}", out.x);
        assert!((out.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn respects_box() {
        // unconstrained minimum at (-20, 3) lies outside the box
        let f = |x: &[f64; 2]| (x[0] + 20.0).powi(2) + (x[1] - 3.0).powi(2);
        let out = minimize(f, [0.0, 0.0], &settings());
        assert!((out.x[0] + 10.0).abs() < 1e-6);
        assert!((out.x[1] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64; 2]| (x[0] * 3.0).sin().abs() + x[1].abs().floor();
        let start = [0.0, 0.2];
        let out = minimize(f, start, &settings());
        assert!(out.fx <= f(&start));
    }
}
