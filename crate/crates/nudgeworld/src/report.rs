//! Table and chart emission.
//!
//! Every emitter returns a `String` so callers decide where bytes go. CSV
//! cells never contain commas: kind sets are joined with `+`, infeasible
//! values are spelled `absent`, and floats use the shortest round-trip form,
//! which keeps identical runs byte-identical.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::Result;
use crate::experiments::{EffectivenessRow, PolicyMap, TrialVerdict, UserPreset};
use crate::intervention::InterventionKind;
use crate::model::{user_policy, user_value, v_right, v_stay, UserParams, UserState, WorldParams};
use crate::planner::{classify, WindowDecomposition};
use crate::sim::{BatchStats, Ci};

/// Kind set as a stable single CSV cell, e.g. `b+gamma`. Empty set -> empty cell.
pub fn kind_set_cell(kinds: &BTreeSet<InterventionKind>) -> String {
    kinds.iter().map(|k| k.label()).collect::<Vec<_>>().join("+")
}

fn state_cell(state: UserState) -> String {
    match state {
        UserState::Progress(w) => w.to_string(),
        UserState::Goal => "goal".into(),
        UserState::Disengaged => "disengaged".into(),
    }
}

fn option_cell<T: std::fmt::Display>(value: Option<T>) -> String {
    value.map(|v| v.to_string()).unwrap_or_else(|| "absent".into())
}

/// One row per (user type, state): window label, admissible set, chosen kind.
pub fn policy_map_csv(maps: &[PolicyMap]) -> String {
    let mut out = String::from("preset,state,delta,window,admissible,chosen,default_act\n");
    for map in maps {
        for d in &map.policy.decisions {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                map.preset,
                state_cell(d.state),
                option_cell(d.delta),
                classify(&d.admissible),
                kind_set_cell(&d.admissible),
                d.chosen,
                d.default_act as u8
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

/// One row per labeled window run, farthest first.
pub fn window_runs_csv(decompositions: &[(UserPreset, WindowDecomposition)]) -> String {
    let mut out = String::from("preset,window,delta_far,delta_near,kinds\n");
    for (preset, decomposition) in decompositions {
        for run in &decomposition.runs {
            writeln!(
                out,
                "{},{},{},{},{}",
                preset,
                run.label,
                run.delta_far,
                run.delta_near,
                kind_set_cell(&run.kinds)
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

/// One row per (user type, state, kind) with the minimum flipping percentage.
pub fn effectiveness_csv(rows: &[EffectivenessRow]) -> String {
    let mut out = String::from("preset,w,delta,kind,effectiveness_pct\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.preset,
            row.w,
            row.delta,
            row.kind,
            option_cell(row.effectiveness_pct)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// One row per sweep trial with the sampled parameters and verdicts.
pub fn sensitivity_csv(verdicts: &[TrialVerdict]) -> String {
    let mut out = String::from(
        "trial,gamma_user,p_user,burden,disengage_reward,d_world,vacuous,pattern1,pattern2,window3_seen,passes\n",
    );
    for v in verdicts {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            v.index,
            v.sample.gamma_user,
            v.sample.p_user,
            v.sample.burden,
            v.sample.disengage_reward,
            v.sample.d_world,
            v.vacuous as u8,
            v.pattern1 as u8,
            v.pattern2 as u8,
            v.window3_seen as u8,
            v.passes() as u8
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Per-state user values: stay value, march value, their max, and the decision.
pub fn user_values_csv(user: &UserParams, world: &WorldParams) -> Result<String> {
    let mut out = String::from("delta,w,v_stay,v_right,v_star,acts\n");
    let stay = v_stay(user, world.d_world)?;
    for w in 1..world.n_states {
        let delta = world.n_states - w;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            delta,
            w,
            stay,
            v_right(user, delta)?,
            user_value(user, world.d_world, delta)?,
            user_policy(user, world.d_world, delta)? as u8
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

fn ci_row(out: &mut String, metric: &str, ci: Ci) {
    writeln!(out, "{metric},{},{},{}", ci.estimate, ci.lo, ci.hi)
        .expect("writing to a String cannot fail");
}

/// Long-format batch summary: one metric per row with its 95% interval.
pub fn batch_stats_csv(stats: &BatchStats) -> String {
    let mut out = String::from("metric,estimate,ci_lo,ci_hi\n");
    writeln!(out, "episodes,{},,", stats.episodes).expect("writing to a String cannot fail");
    ci_row(&mut out, "goal_rate", stats.goal_rate);
    ci_row(&mut out, "disengage_rate", stats.disengage_rate);
    ci_row(&mut out, "horizon_exceeded_rate", stats.horizon_exceeded_rate);
    ci_row(&mut out, "mean_app_return", stats.mean_app_return);
    ci_row(&mut out, "mean_steps", stats.mean_steps);
    match stats.mean_steps_to_goal {
        Some(ci) => ci_row(&mut out, "mean_steps_to_goal", ci),
        None => writeln!(out, "mean_steps_to_goal,absent,absent,absent")
            .expect("writing to a String cannot fail"),
    }
    out
}

const WINDOW_COLORS: [(&str, &str); 5] = [
    ("hopeless", "#9e9e9e"),
    ("window1", "#f4a261"),
    ("window2", "#2a9d8f"),
    ("window3", "#e76f51"),
    ("default_act", "#a8dadc"),
];

fn window_color(label: &str) -> &'static str {
    WINDOW_COLORS
        .iter()
        .find(|(name, _)| *name == label)
        .map(|(_, color)| *color)
        .unwrap_or("#000000")
}

/// Policy maps as one colored strip per user type: a cell per progress state
/// (far on the left) plus the disengaged cell, colored by window label.
pub fn policy_map_svg(maps: &[PolicyMap]) -> String {
    let cell = 56.0;
    let row_h = 44.0;
    let left = 150.0;
    let top = 40.0;
    let states = maps.first().map(|m| m.policy.decisions.len() - 1).unwrap_or(0); // drop goal
    let width = left + states as f64 * cell + 40.0;
    let height = top + maps.len() as f64 * (row_h + 18.0) + 60.0;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, map) in maps.iter().enumerate() {
        let y = top + i as f64 * (row_h + 18.0);
        let _ = writeln!(
            out,
            "<text x=\"10\" y=\"{}\" dominant-baseline=\"middle\">{}</text>",
            y + row_h / 2.0,
            map.preset
        );
        // progress cells (far to near), then the disengaged cell
        let mut column = 0usize;
        for d in &map.policy.decisions {
            if d.state == UserState::Goal {
                continue;
            }
            let x = left + column as f64 * cell;
            let label = classify(&d.admissible);
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{row_h}\" fill=\"{}\" \
                 stroke=\"white\"/>",
                window_color(label.label())
            );
            let text = match d.state {
                UserState::Disengaged => "dis".to_string(),
                other => state_cell(other),
            };
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#333\">{}</text>",
                x + cell / 2.0,
                y + row_h + 14.0,
                text
            );
            let kinds = kind_set_cell(&d.admissible);
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" dominant-baseline=\"middle\" \
                 fill=\"#111\" font-size=\"10\">{}</text>",
                x + cell / 2.0,
                y + row_h / 2.0,
                kinds
            );
            column += 1;
        }
    }
    let mut legend_x = left;
    let legend_y = height - 28.0;
    for (name, color) in WINDOW_COLORS {
        let _ = writeln!(
            out,
            "<rect x=\"{legend_x}\" y=\"{legend_y}\" width=\"14\" height=\"14\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\">{name}</text>",
            legend_x + 18.0,
            legend_y + 12.0
        );
        legend_x += 110.0;
    }
    out.push_str("</svg>\n");
    out
}

const KIND_COLORS: [(InterventionKind, &str); 4] = [
    (InterventionKind::OnB, "#e63946"),
    (InterventionKind::OnD, "#457b9d"),
    (InterventionKind::OnGamma, "#2a9d8f"),
    (InterventionKind::OnP, "#f4a261"),
];

/// Effectiveness curves as one panel per user type: percentage of the cap
/// (y, 0..100) against distance to the goal (x, far on the left). Infeasible
/// cells break the line.
pub fn effectiveness_svg(rows: &[EffectivenessRow]) -> String {
    let presets: Vec<UserPreset> = {
        let mut seen = Vec::new();
        for row in rows {
            if !seen.contains(&row.preset) {
                seen.push(row.preset);
            }
        }
        seen
    };
    let deltas: Vec<usize> = {
        let mut d: Vec<usize> = rows.iter().map(|r| r.delta).collect();
        d.sort_unstable();
        d.dedup();
        d.reverse(); // far on the left
        d
    };
    let panel_w = 260.0;
    let panel_h = 180.0;
    let margin = 50.0;
    let cols = 2usize;
    let rows_n = presets.len().div_ceil(cols);
    let width = cols as f64 * (panel_w + margin) + margin;
    let height = rows_n as f64 * (panel_h + margin + 30.0) + margin;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let x_of = |delta: usize, x0: f64| {
        let i = deltas.iter().position(|&d| d == delta).unwrap_or(0);
        if deltas.len() <= 1 {
            x0 + panel_w / 2.0
        } else {
            x0 + i as f64 / (deltas.len() - 1) as f64 * panel_w
        }
    };
    let y_of = |pct: f64, y0: f64| y0 + panel_h - pct / 100.0 * panel_h;
    for (i, preset) in presets.iter().enumerate() {
        let x0 = margin + (i % cols) as f64 * (panel_w + margin);
        let y0 = margin + (i / cols) as f64 * (panel_h + margin + 30.0);
        let _ = writeln!(out, "<text x=\"{x0}\" y=\"{}\" font-weight=\"bold\">{preset}</text>", y0 - 8.0);
        let _ = writeln!(
            out,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{panel_w}\" height=\"{panel_h}\" fill=\"none\" \
             stroke=\"#ccc\"/>"
        );
        for pct in [0, 50, 100] {
            let y = y_of(pct as f64, y0);
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" dominant-baseline=\"middle\">{pct}%</text>",
                x0 - 6.0,
                y
            );
        }
        for &delta in &deltas {
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{delta}</text>",
                x_of(delta, x0),
                y0 + panel_h + 16.0
            );
        }
        for (kind, color) in KIND_COLORS {
            // split into contiguous feasible segments so absences break the line
            let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
            for &delta in &deltas {
                let value = rows
                    .iter()
                    .find(|r| r.preset == *preset && r.delta == delta && r.kind == kind)
                    .and_then(|r| r.effectiveness_pct);
                match value {
                    Some(pct) => segments
                        .last_mut()
                        .expect("seeded with one segment")
                        .push((x_of(delta, x0), y_of(pct, y0))),
                    None => {
                        if !segments.last().expect("seeded").is_empty() {
                            segments.push(Vec::new());
                        }
                    }
                }
            }
            for segment in segments.iter().filter(|s| !s.is_empty()) {
                let points: Vec<String> =
                    segment.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                    points.join(" ")
                );
                for (x, y) in segment {
                    let _ = writeln!(out, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"2.5\" fill=\"{color}\"/>");
                }
            }
        }
    }
    let mut legend_x = margin;
    let legend_y = height - 16.0;
    for (kind, color) in KIND_COLORS {
        let _ = writeln!(
            out,
            "<rect x=\"{legend_x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            legend_y - 10.0,
            legend_x + 16.0,
            legend_y,
            kind.label()
        );
        legend_x += 90.0;
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{
        default_user, default_world, reproduce_effectiveness_curves, reproduce_policy_maps,
        run_sensitivity, ExperimentConfig,
    };
    use crate::intervention::InterventionProfile;
    use crate::planner::{plan, DEFAULT_GAMMA_APP};
    use crate::sim::{batch_stats, derive_seeds};

    #[test]
    fn kind_sets_join_with_plus_and_never_commas() {
        let mut kinds = BTreeSet::new();
        assert_eq!(kind_set_cell(&kinds), "");
        kinds.insert(InterventionKind::OnGamma);
        kinds.insert(InterventionKind::OnB);
        kinds.insert(InterventionKind::NoOp);
        assert_eq!(kind_set_cell(&kinds), "none+b+gamma");
    }

    #[test]
    fn policy_map_table_has_a_row_per_state_and_no_stray_commas() {
        let maps = reproduce_policy_maps(&ExperimentConfig::default()).unwrap();
        let csv = policy_map_csv(&maps);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4 * 9);
        let columns = lines[0].split(',').count();
        for line in &lines {
            assert_eq!(line.split(',').count(), columns, "ragged row: {line}");
        }
        assert!(csv.contains("myopic,7,1,default_act"));
        assert!(csv.contains("myopic,disengaged,absent,hopeless,,none,0"));
    }

    #[test]
    fn effectiveness_table_spells_absences() {
        let config = ExperimentConfig { resolution: 1000, ..ExperimentConfig::default() };
        let rows = reproduce_effectiveness_curves(&config).unwrap();
        let csv = effectiveness_csv(&rows);
        assert!(csv.contains("underconfident,5,3,d,absent"));
        assert!(csv.contains("underconfident,5,3,b,98.5"));
        assert_eq!(csv.lines().count(), 1 + rows.len());
    }

    #[test]
    fn sensitivity_table_is_deterministic() {
        let config = ExperimentConfig::default();
        let a = sensitivity_csv(&run_sensitivity(&config, 5, 3).unwrap());
        let b = sensitivity_csv(&run_sensitivity(&config, 5, 3).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 6);
    }

    #[test]
    fn user_value_table_matches_the_closed_forms() {
        let user = default_user();
        let world = default_world();
        let csv = user_values_csv(&user, &world).unwrap();
        let line = csv.lines().find(|l| l.starts_with("1,7,")).unwrap();
        let v_right_cell: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(v_right_cell, 6.578947368421053);
        assert!(line.ends_with(",1"));
    }

    #[test]
    fn batch_table_covers_every_metric() {
        let user = default_user();
        let world = default_world();
        let profile = InterventionProfile::maximal(&user);
        let policy = plan(&user, &world, &profile, DEFAULT_GAMMA_APP).unwrap();
        let stats = batch_stats(
            &user,
            &world,
            &policy,
            &profile,
            &derive_seeds(1, 200),
            100,
            1,
        )
        .unwrap();
        let csv = batch_stats_csv(&stats);
        for metric in [
            "episodes",
            "goal_rate",
            "disengage_rate",
            "horizon_exceeded_rate",
            "mean_app_return",
            "mean_steps",
            "mean_steps_to_goal",
        ] {
            assert!(csv.lines().any(|l| l.starts_with(metric)), "missing {metric}");
        }
    }

    #[test]
    fn svg_emitters_produce_wellformed_markup() {
        let config = ExperimentConfig { resolution: 1000, ..ExperimentConfig::default() };
        let maps = reproduce_policy_maps(&config).unwrap();
        let strip = policy_map_svg(&maps);
        assert!(strip.starts_with("<svg"));
        assert!(strip.trim_end().ends_with("</svg>"));
        assert_eq!(strip.matches("<svg").count(), 1);
        // one strip cell per preset per non-goal state, plus 5 legend swatches
        assert_eq!(strip.matches("<rect").count(), 1 + 4 * 8 + 5);

        let rows = reproduce_effectiveness_curves(&config).unwrap();
        let chart = effectiveness_svg(&rows);
        assert!(chart.starts_with("<svg"));
        assert!(chart.trim_end().ends_with("</svg>"));
        assert!(chart.contains("<polyline"));
    }
}
