use crate::data::MatchSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Granularity {
    Point,
    Game,
    Set,
    Match,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::Point, Granularity::Game, Granularity::Set, Granularity::Match];

    pub fn name(self) -> &'static str {
        match self {
            Granularity::Point => "point",
            Granularity::Game => "game",
            Granularity::Set => "set",
            Granularity::Match => "match",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A prediction target read from the momentum score at point `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GranularitySample {
    pub granularity: Granularity,
    /// 0-based point index.
    pub t: usize,
    /// 1 when player 1 wins.
    pub label: u8,
}

/// 0-based index of the half-time point of an `n`-point match, i.e. point
/// `ceil(n / 2)` counted from 1.
pub fn half_time_index(n: usize) -> usize {
    n.div_ceil(2).max(1) - 1
}

fn label(winner: u8) -> u8 {
    u8::from(winner == 1)
}

/// Every point's outcome; the next game's winner at the last point of each
/// game that has a successor; the next set's winner at the last point of
/// each set that has a successor; the match winner at the half-time point.
pub fn assemble_granularity_targets(m: &MatchSequence) -> Vec<GranularitySample> {
    let mut out: Vec<GranularitySample> = (0..m.len())
        .map(|t| GranularitySample { granularity: Granularity::Point, t, label: m.y_point[t] })
        .collect();
    for pair in m.games.windows(2) {
        out.push(GranularitySample { granularity: Granularity::Game, t: pair[0].end - 1, label: label(pair[1].winner) });
    }
    for pair in m.sets.windows(2) {
        out.push(GranularitySample { granularity: Granularity::Set, t: pair[0].end - 1, label: label(pair[1].winner) });
    }
    if !m.is_empty() {
        out.push(GranularitySample { granularity: Granularity::Match, t: half_time_index(m.len()), label: label(m.winner) });
    }
    out
}
