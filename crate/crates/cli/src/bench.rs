//! Test functions for exercising DIRECT on its own.

use esilc::direct::SearchDomain;
use esilc::numerics::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchFunction {
    /// `|x|²` on `[-1, 2]²`
    Sphere,
    /// `(x₀ − 0.2)² + (x₁ − 0.7)²` on `[0, 1]²`
    ShiftedQuadratic,
    /// 2-D Rastrigin on `[-4, 6]²`
    #[value(name = "rastrigin-2d")]
    Rastrigin2d,
}

impl BenchFunction {
    pub fn name(self) -> &'static str {
        match self {
            BenchFunction::Sphere => "sphere",
            BenchFunction::ShiftedQuadratic => "shifted-quadratic",
            BenchFunction::Rastrigin2d => "rastrigin-2d",
        }
    }

    pub fn domain(self) -> SearchDomain {
        let (lo, hi) = match self {
            BenchFunction::Sphere => (-1.0, 2.0),
            BenchFunction::ShiftedQuadratic => (0.0, 1.0),
            BenchFunction::Rastrigin2d => (-4.0, 6.0),
        };
        SearchDomain::new(Vector::from_element(2, lo), Vector::from_element(2, hi))
            .expect("bench domains are valid")
    }

    pub fn minimizer(self) -> Vector {
        match self {
            BenchFunction::ShiftedQuadratic => Vector::from_vec(vec![0.2, 0.7]),
            _ => Vector::zeros(2),
        }
    }

    pub fn eval(self, x: &Vector) -> f64 {
        match self {
            BenchFunction::Sphere => x.norm_squared(),
            BenchFunction::ShiftedQuadratic => (x - self.minimizer()).norm_squared(),
            BenchFunction::Rastrigin2d => {
                let tau = 2.0 * std::f64::consts::PI;
                20.0 + x.iter().map(|v| v * v - 10.0 * (tau * v).cos()).sum::<f64>()
            }
        }
    }
}
