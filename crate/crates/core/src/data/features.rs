use crate::data::record::{PlayerPoint, PointRecord};

/// Number of per-player point factors.
pub const FEATURE_DIM: usize = 16;

/// Per-player factor names in feature order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "serve",
    "double_fault",
    "break_pt_missed",
    "ace",
    "serve_speed",
    "serve_depth",
    "break_pt_won",
    "return_depth",
    "unf_err",
    "net_pt",
    "net_pt_won",
    "winner",
    "points_diff",
    "game_diff",
    "set_diff",
    "distance_run",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Serve,
    Return,
    Psychology,
    Fatigue,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Serve, Modality::Return, Modality::Psychology, Modality::Fatigue];

    /// Half-open index range of this group inside a feature vector.
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Modality::Serve => 0..6,
            Modality::Return => 6..8,
            Modality::Psychology => 8..15,
            Modality::Fatigue => 15..16,
        }
    }

    pub fn width(self) -> usize {
        self.range().len()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Serve => "serve",
            Modality::Return => "return",
            Modality::Psychology => "psychology",
            Modality::Fatigue => "fatigue",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

pub type PlayerFeatureVector = [f64; FEATURE_DIM];

fn player_features(p: &PlayerPoint) -> PlayerFeatureVector {
    let f = |v: u8| f64::from(v);
    [
        f(p.serve),
        f(p.double_fault),
        f(p.break_pt_missed),
        f(p.ace),
        if p.serve == 1 { p.serve_speed.unwrap_or(0.0) } else { 0.0 },
        f(p.serve_depth),
        f(p.break_pt_won),
        f(p.return_depth),
        f(p.unf_err),
        f(p.net_pt),
        f(p.net_pt_won),
        f(p.winner),
        p.points_diff as f64,
        p.game_diff as f64,
        p.set_diff as f64,
        p.distance_run,
    ]
}

/// The 16 factors for each player of a cleaned, normalized point. Serve
/// speed contributes only on the points the player serves.
pub fn extract_momentum_features(point: &PointRecord) -> (PlayerFeatureVector, PlayerFeatureVector) {
    (player_features(&point.players[0]), player_features(&point.players[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_record_gives_zero_vectors() {
        let (a, b) = extract_momentum_features(&PointRecord::default());
        assert_eq!(a, [0.0; 16]);
        assert_eq!(b, [0.0; 16]);
    }

    #[test]
    fn ace_lands_in_serve_group() {
        let mut r = PointRecord::default();
        r.players[0].ace = 1;
        let (a, b) = extract_momentum_features(&r);
        let ones: Vec<usize> = (0..16).filter(|&i| a[i] != 0.0).collect();
        assert_eq!(ones, vec![3]);
        assert_eq!(FEATURE_NAMES[3], "ace");
        assert!(Modality::Serve.range().contains(&3));
        assert_eq!(b, [0.0; 16]);
    }

    #[test]
    fn group_widths() {
        let w: Vec<usize> = Modality::ALL.iter().map(|m| m.width()).collect();
        assert_eq!(w, vec![6, 2, 7, 1]);
        assert_eq!(Modality::Fatigue.range().end, FEATURE_DIM);
    }
}
