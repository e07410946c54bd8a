use crate::product_space::CompositionSpec;

/// Per-shell KL (nats) below which a shell counts as ignored.
pub const DEFAULT_IGNORE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShellStatus {
    Active,
    Ignored,
}

impl ShellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ShellStatus::Active => "active",
            ShellStatus::Ignored => "ignored",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellDiagnosis {
    pub shell: usize,
    pub dof: usize,
    pub kl: f64,
    pub mean_kappa: Option<f64>,
    pub status: ShellStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellReport {
    pub shells: Vec<ShellDiagnosis>,
    pub total_dof: usize,
    /// Sum of `k_i` over active shells.
    pub effective_dof: usize,
}

impl ShellReport {
    pub fn statuses(&self) -> Vec<ShellStatus> {
        self.shells.iter().map(|s| s.status).collect()
    }

    pub fn ignored_count(&self) -> usize {
        self.shells
            .iter()
            .filter(|s| s.status == ShellStatus::Ignored)
            .count()
    }
}

/// Flags shells whose per-shell KL falls below `threshold`. `mean_kappas`
/// is only echoed in the report.
pub fn diagnose_shells(
    spec: &CompositionSpec,
    shell_kls: &[f64],
    mean_kappas: Option<&[f64]>,
    threshold: f64,
) -> ShellReport {
    let shells: Vec<ShellDiagnosis> = spec
        .dims()
        .iter()
        .zip(shell_kls)
        .enumerate()
        .map(|(i, (&dof, &kl))| ShellDiagnosis {
            shell: i,
            dof,
            kl,
            mean_kappa: mean_kappas.and_then(|k| k.get(i).copied()),
            status: if kl < threshold {
                ShellStatus::Ignored
            } else {
                ShellStatus::Active
            },
        })
        .collect();
    let effective_dof = shells
        .iter()
        .filter(|s| s.status == ShellStatus::Active)
        .map(|s| s.dof)
        .sum();
    ShellReport {
        shells,
        total_dof: spec.dof(),
        effective_dof,
    }
}
