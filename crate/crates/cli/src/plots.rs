//! Optional SVG figures: training loss and per-configuration accuracy.

use std::path::Path;

use plotters::prelude::*;
use prd_core::inference::{reference, EvalReport};
use prd_core::problem::Configuration;
use prd_core::trainer::LossRecord;

use crate::error::{CliError, CliResult};

type Series = (&'static str, RGBColor, fn(&LossRecord) -> f32);

fn plot_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Plot {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Real, fake and mean loss against step.
pub fn loss_curve(history: &[LossRecord], path: &Path) -> CliResult<()> {
    let draw = || -> Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
        root.fill(&WHITE)?;
        let last = history.last().map_or(1, |r| r.step.max(1));
        let top = history
            .iter()
            .flat_map(|r| [r.loss_real, r.loss_fake])
            .filter(|v| v.is_finite())
            .fold(0.8f32, f32::max);
        let mut chart = ChartBuilder::on(&root)
            .caption("training loss", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(52)
            .build_cartesian_2d(0usize..last, 0f32..top * 1.05)?;
        chart.configure_mesh().x_desc("step").y_desc("BCE").draw()?;
        let series: [Series; 3] = [
            ("real", BLUE, |r| r.loss_real),
            ("fake", RED, |r| r.loss_fake),
            ("mean", BLACK, |r| r.mean() as f32),
        ];
        for (name, color, value) in series {
            chart
                .draw_series(LineSeries::new(history.iter().map(|r| (r.step, value(r))), color))?
                .label(name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}

/// Accuracy per configuration beside the published reference row.
pub fn accuracy_bars(report: &EvalReport, path: &Path) -> CliResult<()> {
    let draw = || -> Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
        root.fill(&WHITE)?;
        let labels: Vec<&str> = Configuration::ALL
            .iter()
            .map(|c| c.short_name())
            .chain(std::iter::once("Avg"))
            .collect();
        let ours: Vec<f64> = Configuration::ALL
            .iter()
            .map(|&c| report.accuracy_for(c).unwrap_or(0.0))
            .chain(std::iter::once(report.mean_accuracy))
            .collect();
        let paper = reference::TABLE1[0].1;
        let n = labels.len();
        let mut chart = ChartBuilder::on(&root)
            .caption("accuracy by configuration (%)", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(44)
            .build_cartesian_2d(0f64..n as f64, 0f64..100f64)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n * 2)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - i as f64 - 0.5).abs() < 1e-6 && i < labels.len() {
                    labels[i].to_string()
                } else {
                    String::new()
                }
            })
            .y_desc("accuracy")
            .draw()?;
        let bar = |i: usize, offset: f64, v: f64| [(i as f64 + offset, 0.0), (i as f64 + offset + 0.35, v)];
        chart
            .draw_series(
                ours.iter()
                    .enumerate()
                    .map(|(i, &v)| Rectangle::new(bar(i, 0.12, v), BLUE.filled())),
            )?
            .label("this model")
            .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 14, y + 5)], BLUE.filled()));
        chart
            .draw_series(
                paper
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| Rectangle::new(bar(i, 0.53, v), RGBColor(170, 170, 170).filled())),
            )?
            .label("published")
            .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 14, y + 5)], RGBColor(170, 170, 170).filled()));
        chart
            .draw_series(LineSeries::new(
                [(0.0, reference::RANDOM), (n as f64, reference::RANDOM)],
                RED.stroke_width(1),
            ))?
            .label("chance")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], RED));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}
