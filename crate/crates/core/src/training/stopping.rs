use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// Strictly better than every earlier epoch.
    Improved,
    Continue,
    /// More than `patience` epochs strictly below the best.
    Stop,
}

/// Patience rule on validation AUC. Only strictly lower epochs count toward
/// patience; an epoch equal to the best neither improves nor counts.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    below: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            below: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, auc: f64) -> StopDecision {
        self.epoch += 1;
        match self.best {
            Some(best) if auc <= best => {
                if auc < best {
                    self.below += 1;
                }
                if self.below > self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some(auc);
                self.best_epoch = self.epoch;
                self.below = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best value, 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_below(&self) -> usize {
        self.below
    }
}

/// How an epoch loop ended.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub aucs: Vec<f64>,
    pub best_epoch: usize,
    pub best_auc: f64,
    /// Number of epochs run.
    pub stopped_epoch: usize,
    pub stopped_early: bool,
}

/// Runs `epoch(e)` for `e = 1, 2, ...` until the patience rule fires or
/// `max_epochs` is reached. `on_improve` runs after each new best.
pub fn run_schedule(
    patience: usize,
    max_epochs: usize,
    mut epoch: impl FnMut(usize) -> Result<f64>,
    mut on_improve: impl FnMut(usize) -> Result<()>,
) -> Result<Schedule> {
    let mut rule = EarlyStopping::new(patience);
    let mut aucs = Vec::new();
    let mut stopped_early = false;
    for e in 1..=max_epochs {
        let auc = epoch(e)?;
        aucs.push(auc);
        match rule.observe(auc) {
            StopDecision::Improved => on_improve(e)?,
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(Schedule {
        stopped_epoch: aucs.len(),
        aucs,
        best_epoch: rule.best_epoch(),
        best_auc: rule.best().unwrap_or(f64::NAN),
        stopped_early,
    })
}
