use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::eval::flops::branch_flops;

/// Output resolution used when comparing branch costs; every layer cost
/// scales with pixel count, so the fractions do not depend on it.
const REFERENCE_RES: (usize, usize) = (256, 256);
pub const FRACTION_TOLERANCE: f64 = 0.02;

/// Pick each branch's internal width so its FLOPs share of the reference
/// decoder (one branch at `cam_width`) matches the configured fraction.
/// The last branch targets whatever share the earlier branches left over.
pub fn size_branches(config: &CodecConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let (h, w) = REFERENCE_RES;
    let c = config.latent_channels;
    let reference = branch_flops(c, config.cam_width, h, w)? as f64;
    let fraction_at = |t: usize| -> Result<f64> { Ok(branch_flops(c, t, h, w)? as f64 / reference) };
    let mut widths = Vec::with_capacity(config.k_max);
    let mut achieved = 0.0;
    for (k, &target) in config.branch_flops_fractions.iter().enumerate() {
        let target = if k + 1 == config.k_max {
            1.0 - achieved
        } else {
            target
        };
        // smallest width whose share reaches the target, then the closer neighbour
        let (mut lo, mut hi) = (1usize, config.cam_width.max(1) * 4);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if fraction_at(mid)? < target {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let mut best = lo;
        if lo > 1 && (fraction_at(lo - 1)? - target).abs() <= (fraction_at(lo)? - target).abs() {
            best = lo - 1;
        }
        let got = fraction_at(best)?;
        if (got - target).abs() > FRACTION_TOLERANCE {
            return Err(Error::Config(format!(
                "branch {} cannot reach {:.1}% of the reference decoder FLOPs (closest {:.1}% at width {best})",
                k + 1,
                target * 100.0,
                got * 100.0
            )));
        }
        achieved += got;
        widths.push(best);
    }
    Ok(widths)
}

/// Largest branch count whose cumulative cost fits the budget.
pub fn select_branches(budget_flops: f64, flops_table: &[f64]) -> Result<usize> {
    if !(budget_flops > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "FLOPs budget must be positive, got {budget_flops}"
        )));
    }
    let first = *flops_table
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty FLOPs table".into()))?;
    let mut cum = 0.0;
    let mut k = 0;
    for &f in flops_table {
        cum += f;
        if cum > budget_flops {
            break;
        }
        k += 1;
    }
    if k == 0 {
        return Err(Error::BudgetInfeasible {
            budget: budget_flops,
            required: first,
        });
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_branch_takes_reference_width() {
        let mut c = CodecConfig::desk();
        c.k_max = 1;
        c.branch_flops_fractions = vec![1.0];
        assert_eq!(size_branches(&c).unwrap(), vec![c.cam_width]);
    }

    #[test]
    fn quarter_share_at_width_128_is_about_64() {
        let widths = size_branches(&CodecConfig::paper_scale()).unwrap();
        assert!((60..=66).contains(&widths[0]), "{widths:?}");
        assert_eq!(widths[0], widths[1]);
        // FLOPs per width, recomputed independently of the search
        let f = |t| branch_flops(128, t, 256, 256).unwrap() as f64;
        let reference = f(128);
        let fr: Vec<f64> = widths.iter().map(|&t| f(t) / reference).collect();
        for (got, want) in fr.iter().zip([0.25, 0.25, 0.5]) {
            assert!((got - want).abs() <= FRACTION_TOLERANCE, "{fr:?}");
        }
        assert!((fr.iter().sum::<f64>() - 1.0).abs() <= FRACTION_TOLERANCE * 3.0);
    }

    #[test]
    fn desk_widths_meet_tolerance() {
        let c = CodecConfig::desk();
        let widths = size_branches(&c).unwrap();
        assert_eq!(widths.len(), 3);
        let f = |t| branch_flops(32, t, 64, 64).unwrap() as f64;
        for (t, want) in widths.iter().zip([0.25, 0.25, 0.5]) {
            assert!((f(*t) / f(32) - want).abs() <= FRACTION_TOLERANCE);
        }
    }

    #[test]
    fn select_branches_cases() {
        let table = [25.0, 25.0, 50.0];
        assert_eq!(select_branches(1000.0, &table).unwrap(), 3);
        assert_eq!(select_branches(100.0, &table).unwrap(), 3);
        assert_eq!(select_branches(30.0, &table).unwrap(), 1);
        assert_eq!(select_branches(50.0, &table).unwrap(), 2);
        assert!(matches!(
            select_branches(10.0, &table),
            Err(Error::BudgetInfeasible { .. })
        ));
        assert!(select_branches(-1.0, &table).is_err());
    }
}
