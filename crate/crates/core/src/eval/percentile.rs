use super::MetricError;
use crate::model::Direction;

/// `floor(100 * strictly_better / n)`: the share of leaderboard entries that
/// beat `candidate`. 0 is best; ties do not count against the candidate.
pub fn percentile(
    candidate: f64,
    leaderboard: &[f64],
    direction: Direction,
) -> Result<u32, MetricError> {
    if leaderboard.is_empty() {
        return Err(MetricError::EmptyLeaderboard);
    }
    let better = leaderboard
        .iter()
        .filter(|&&entry| direction.is_strictly_better(entry, candidate))
        .count();
    Ok((100 * better / leaderboard.len()) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let lb: Vec<f64> = (0..694).map(|i| 0.06 + i as f64 * 0.001).collect();
        assert_eq!(percentile(0.059, &lb, Direction::LowerBetter).unwrap(), 0);
        assert_eq!(
            percentile(9.0, &[1.0, 2.0, 3.0, 4.0], Direction::LowerBetter).unwrap(),
            100
        );
        assert_eq!(
            percentile(2.5, &[1.0, 2.0, 3.0], Direction::LowerBetter).unwrap(),
            66
        );
        assert_eq!(
            percentile(2.5, &[1.0, 2.0, 3.0], Direction::HigherBetter).unwrap(),
            33
        );
        assert_eq!(
            percentile(2.0, &[2.0, 2.0], Direction::LowerBetter).unwrap(),
            0
        );
        assert!(percentile(1.0, &[], Direction::LowerBetter).is_err());
    }
}
