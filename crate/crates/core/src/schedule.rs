// Copyright 2026 The CKI Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Adversarial warm-up and step learning-rate schedules.

/// `min(1, epoch / warmup_epochs)`, or 1 without warm-up.
pub fn lambda_schedule(epoch: usize, warmup_epochs: usize) -> f64 {
    if warmup_epochs == 0 {
        return 1.0;
    }
    (epoch as f64 / warmup_epochs as f64).min(1.0)
}

/// `base_lr · gamma^floor(epoch / (total_epochs / 10))`.
pub fn lr_schedule(base_lr: f64, epoch: usize, total_epochs: usize, gamma: f64) -> f64 {
    let decade = (epoch * 10) / total_epochs.max(1);
    base_lr * libm::pow(gamma, decade as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_values() {
        assert_eq!(lambda_schedule(0, 20), 0.0);
        assert_eq!(lambda_schedule(10, 20), 0.5);
        assert_eq!(lambda_schedule(50, 20), 1.0);
        assert_eq!(lambda_schedule(3, 0), 1.0);
    }

    #[test]
    fn step_decay_values() {
        assert_eq!(lr_schedule(5e-4, 0, 100, 0.9), 5e-4);
        assert!((lr_schedule(1.0, 35, 100, 0.9) - 0.9f64.powi(3)).abs() < 1e-15);
        let last = lr_schedule(1.0, 99, 100, 0.9);
        assert!((last - 0.387_420_489).abs() < 1e-12);
        assert!((lr_schedule(1.0, 59, 60, 0.9) - 0.9f64.powi(9)).abs() < 1e-15);
    }
}
