//! Static SVG figures of a run.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use vpp_cosim::cosim::History;

const SIZE: (u32, u32) = (960, 480);

fn hours(t_sec: f64) -> f64 {
    t_sec / 3600.0
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn time_range(h: &History) -> (f64, f64) {
    let t0 = h.steps.first().map_or(0.0, |s| hours(s.t_sec));
    let t1 = h.steps.last().map_or(1.0, |s| hours(s.t_sec));
    (t0, if t1 > t0 { t1 } else { t0 + 1.0 / 3600.0 })
}

/// Feeder-head active power against its reference.
pub fn plot_p0(h: &History, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let (y0, y1) = span(h.steps.iter().flat_map(|s| [s.p0, s.p0_set]));
    let (t0, t1) = time_range(h);
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(t0..t1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("time of day (h)")
        .y_desc("P0 (p.u.)")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(LineSeries::new(
            h.steps.iter().map(|s| (hours(s.t_sec), s.p0_set)),
            &RED,
        ))
        .map_err(|e| anyhow!("{e}"))?
        .label("P0 reference")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    chart
        .draw_series(LineSeries::new(h.steps.iter().map(|s| (hours(s.t_sec), s.p0)), &BLUE))
        .map_err(|e| anyhow!("{e}"))?
        .label("P0")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))
}

/// Monitored bus voltages with the limit band.
pub fn plot_voltages(h: &History, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let (y0, y1) = span(
        h.steps
            .iter()
            .flat_map(|s| s.voltages.iter().copied())
            .chain([h.v_min, h.v_max]),
    );
    let (t0, t1) = time_range(h);
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(t0..t1, y0..y1)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("time of day (h)")
        .y_desc("voltage (p.u.)")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for limit in [h.v_min, h.v_max] {
        chart
            .draw_series(LineSeries::new([(t0, limit), (t1, limit)], BLACK.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?;
    }
    for (j, bus) in h.monitored_buses.iter().enumerate() {
        let color = Palette99::pick(j).to_rgba();
        chart
            .draw_series(LineSeries::new(
                h.steps.iter().map(|s| (hours(s.t_sec), s.voltages[j])),
                color,
            ))
            .map_err(|e| anyhow!("{e}"))?
            .label(format!("bus {bus}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))
}
