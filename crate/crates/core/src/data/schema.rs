/// Column names of a point-by-point CSV, in canonical output order.
pub const COLUMNS: [&str; 54] = [
    "match_id",
    "player1",
    "player2",
    "elapsed_time",
    "set_no",
    "game_no",
    "point_no",
    "p1_sets_won",
    "p2_sets_won",
    "p1_games_won",
    "p2_games_won",
    "p1_score",
    "p2_score",
    "p1_serve",
    "p2_serve",
    "points_victor",
    "p1_points_won",
    "p2_points_won",
    "p1_points_sum",
    "p2_points_sum",
    "game_victor",
    "set_victor",
    "p1_ace",
    "p2_ace",
    "p1_winner",
    "p2_winner",
    "p1_double_fault",
    "p2_double_fault",
    "p1_unf_err",
    "p2_unf_err",
    "p1_net_pt",
    "p2_net_pt",
    "p1_net_pt_won",
    "p2_net_pt_won",
    "p1_break_pt",
    "p2_break_pt",
    "p1_break_pt_won",
    "p2_break_pt_won",
    "p1_break_pt_missed",
    "p2_break_pt_missed",
    "p1_distance_run",
    "p2_distance_run",
    "p1_points_diff",
    "p1_game_diff",
    "p1_set_diff",
    "p2_points_diff",
    "p2_game_diff",
    "p2_set_diff",
    "p1_serve_speed",
    "p2_serve_speed",
    "p1_serve_depth",
    "p2_serve_depth",
    "p1_return_depth",
    "p2_return_depth",
];

pub fn column_index(name: &str) -> Option<usize> {
    COLUMNS.iter().position(|&c| c == name)
}

/// Name of a per-player column, e.g. `player_column(1, "ace") == "p2_ace"`.
pub fn player_column(player: usize, field: &str) -> String {
    format!("p{}_{field}", player + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn fifty_four_unique_columns() {
        let set: HashSet<_> = COLUMNS.iter().collect();
        assert_eq!(set.len(), 54);
    }
}
