//! Heatmaps and trajectory rasters as SVG with a plain-text twin.

use std::fmt::Write;

use bdg_core::game::{Mdp, Topology};
use bdg_core::interaction::{sample_trajectory_hard, InteractionConfig, Trajectory};
use bdg_core::planner::{plan, Policy};
use bdg_core::players::{PlayerTrait, PlayerType};
use bdg_core::rng::derive_rng;

use crate::error::{CliError, Result};

const CELL: f64 = 48.0;
const MARGIN: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RenderTarget {
    Reward,
    Transition,
    Policy,
    Trajectories,
}

impl RenderTarget {
    pub fn name(self) -> &'static str {
        match self {
            RenderTarget::Reward => "reward",
            RenderTarget::Transition => "transition",
            RenderTarget::Policy => "policy",
            RenderTarget::Trajectories => "trajectories",
        }
    }
}

impl std::str::FromStr for RenderTarget {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        [
            RenderTarget::Reward,
            RenderTarget::Transition,
            RenderTarget::Policy,
            RenderTarget::Trajectories,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| CliError::Config(format!("unknown render target {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub svg: String,
    pub text: String,
}

/// A labelled player type to plan for.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTrait {
    pub name: String,
    pub player: PlayerTrait,
}

pub fn canonical_traits() -> Vec<NamedTrait> {
    PlayerType::ALL
        .iter()
        .map(|t| NamedTrait {
            name: t.name().to_string(),
            player: t.center(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RenderOptions {
    pub traits: Vec<NamedTrait>,
    pub rollouts: usize,
    pub interaction: InteractionConfig,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            traits: canonical_traits(),
            rollouts: 10,
            interaction: InteractionConfig::default(),
            seed: 0,
        }
    }
}

pub fn render(target: RenderTarget, topology: &Topology, mdp: &Mdp, opts: &RenderOptions) -> Result<Rendered> {
    match target {
        RenderTarget::Reward => Ok(state_heatmap("reward", topology, &mdp.reward, Scale::Diverging)),
        RenderTarget::Transition => Ok(state_heatmap("stickiness", topology, &stickiness(topology, mdp), Scale::Unit)),
        RenderTarget::Policy => {
            let policies = opts
                .traits
                .iter()
                .map(|t| Ok((t.name.clone(), plan(mdp, &t.player)?.1)))
                .collect::<Result<Vec<_>>>()?;
            Ok(policy_heatmaps(topology, &policies))
        }
        RenderTarget::Trajectories => {
            opts.interaction.validate(mdp.num_states())?;
            let mut panels = Vec::new();
            for (k, t) in opts.traits.iter().enumerate() {
                let (_, policy) = plan(mdp, &t.player)?;
                let mut rng = derive_rng(opts.seed, &[k as u64]);
                let rollouts = (0..opts.rollouts)
                    .map(|_| sample_trajectory_hard(mdp, &policy, &opts.interaction, &mut rng))
                    .collect::<bdg_core::Result<Vec<_>>>()?;
                panels.push((t.name.clone(), rollouts));
            }
            Ok(trajectory_rasters(mdp.num_states(), &panels))
        }
    }
}

/// Probability that `moveRight` stays put in each state.
pub fn stickiness(topology: &Topology, mdp: &Mdp) -> Vec<f64> {
    let right = topology
        .actions()
        .iter()
        .position(|a| *a == bdg_core::game::Action::MoveRight)
        .expect("every topology can move right");
    (0..mdp.num_states())
        .map(|s| {
            if topology.can_move_right(s) {
                mdp.next_state_dist(s, right)[s]
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
pub enum Scale {
    Diverging,
    Unit,
}

fn color(value: f64, scale: Scale, span: f64) -> String {
    let (r, g, b) = match scale {
        Scale::Diverging => {
            let t = if span > 0.0 { (value / span).clamp(-1.0, 1.0) } else { 0.0 };
            if t >= 0.0 {
                (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
            } else {
                (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
            }
        }
        Scale::Unit => {
            let t = value.clamp(0.0, 1.0);
            (255.0 * (1.0 - t), 255.0 * (1.0 - 0.6 * t), 255.0)
        }
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn svg_open(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"monospace\" font-size=\"11\">\n<text x=\"{MARGIN}\" y=\"20\" font-size=\"14\">{title}</text>\n"
    )
}

/// One cell per state, top row of the grid drawn first.
pub fn state_heatmap(title: &str, topology: &Topology, values: &[f64], scale: Scale) -> Rendered {
    let span = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (rows, cols) = (topology.rows, topology.cols);
    let mut svg = svg_open(2.0 * MARGIN + cols as f64 * CELL, 2.0 * MARGIN + rows as f64 * CELL, title);
    let mut text = format!("{title}\n");
    for row in (0..rows).rev() {
        let y = MARGIN + (rows - 1 - row) as f64 * CELL;
        for col in 0..cols {
            let s = topology.state_at(row, col);
            let x = MARGIN + col as f64 * CELL;
            let v = values[s];
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\" stroke=\"black\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v:.2}</text>",
                color(v, scale, span),
                x + CELL / 2.0,
                y + CELL / 2.0 + 4.0,
            );
            let _ = write!(text, "{v:>8.2}");
        }
        text.push('\n');
    }
    svg.push_str("</svg>\n");
    Rendered { svg, text }
}

/// Action probabilities per state, one panel per player type.
pub fn policy_heatmaps(topology: &Topology, policies: &[(String, Policy)]) -> Rendered {
    let actions = topology.actions();
    let states = topology.num_states();
    let panel_w = MARGIN + actions.len() as f64 * CELL;
    let height = 2.0 * MARGIN + states as f64 * CELL / 2.0;
    let mut svg = svg_open(MARGIN + policies.len() as f64 * (panel_w + MARGIN), height + MARGIN, "policy");
    let mut text = String::new();
    for (k, (name, policy)) in policies.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (panel_w + MARGIN);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{name}</text>", x0 + MARGIN, MARGIN - 6.0);
        let _ = write!(text, "{name}\n{:>6}", "state");
        for a in actions {
            let _ = write!(text, "{:>11}", a.name());
        }
        let _ = writeln!(text, "{:>8}", "sum");
        for s in 0..states {
            let y = MARGIN + s as f64 * CELL / 2.0;
            let _ = writeln!(svg, "<text x=\"{x0}\" y=\"{}\">s{s}</text>", y + CELL / 4.0 + 4.0);
            let row = policy.row(s);
            let _ = write!(text, "{s:>6}");
            for (a, p) in row.iter().enumerate() {
                let x = x0 + MARGIN + a as f64 * CELL;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{}\" fill=\"{}\" stroke=\"black\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{p:.2}</text>",
                    CELL / 2.0,
                    color(*p, Scale::Unit, 1.0),
                    x + CELL / 2.0,
                    y + CELL / 4.0 + 4.0,
                );
                let _ = write!(text, "{p:>11.3}");
            }
            let _ = writeln!(text, "{:>8.3}", row.iter().sum::<f64>());
        }
        for (a, action) in actions.iter().enumerate() {
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                x0 + MARGIN + (a as f64 + 0.5) * CELL,
                height + 4.0,
                action.name()
            );
        }
        text.push('\n');
    }
    svg.push_str("</svg>\n");
    Rendered { svg, text }
}

/// State index against time, one panel of rollouts per player type.
pub fn trajectory_rasters(num_states: usize, panels: &[(String, Vec<Trajectory>)]) -> Rendered {
    let horizon = panels
        .iter()
        .flat_map(|(_, ts)| ts.iter().map(|t| t.states.len()))
        .max()
        .unwrap_or(1);
    let step = 16.0;
    let panel_w = horizon.max(2) as f64 * step;
    let panel_h = num_states as f64 * 10.0;
    let width = MARGIN + panels.len() as f64 * (panel_w + MARGIN);
    let mut svg = svg_open(width, panel_h + 2.5 * MARGIN, "trajectories");
    let mut text = String::new();
    let palette = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
    for (k, (name, rollouts)) in panels.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (panel_w + MARGIN);
        let y0 = MARGIN;
        let _ = writeln!(svg, "<text x=\"{x0}\" y=\"{}\">{name}</text>", y0 - 6.0);
        let _ = writeln!(
            svg,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{panel_w}\" height=\"{panel_h}\" fill=\"none\" stroke=\"black\"/>"
        );
        let _ = writeln!(text, "{name}");
        for (i, t) in rollouts.iter().enumerate() {
            let points: Vec<String> = t
                .states
                .iter()
                .enumerate()
                .map(|(time, &s)| {
                    let x = x0 + (time as f64 + 0.5) * panel_w / horizon as f64;
                    let y = y0 + panel_h - (s as f64 + 0.5) * panel_h / num_states as f64;
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-opacity=\"0.7\"/>",
                points.join(" "),
                palette[i % palette.len()]
            );
            let states: Vec<String> = t.states.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(text, "  {}", states.join(" "));
        }
        let _ = writeln!(
            svg,
            "<text x=\"{x0}\" y=\"{}\">time</text>\n<text x=\"{}\" y=\"{}\">state</text>",
            y0 + panel_h + 14.0,
            x0 - 34.0,
            y0 + 10.0
        );
        text.push('\n');
    }
    svg.push_str("</svg>\n");
    Rendered { svg, text }
}
