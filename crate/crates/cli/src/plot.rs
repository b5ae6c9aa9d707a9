//! Bar chart of LMB t-values per model as a standalone SVG.

use convbias_core::eval::EvalReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One bar per cell, zero line in the middle, asterisk above bars whose p
/// is below `alpha`.
pub fn t_value_svg(cells: &[EvalReport], alpha: f64) -> String {
    let max_abs = cells
        .iter()
        .map(|c| c.t.abs())
        .filter(|t| t.is_finite())
        .fold(1.0_f64, f64::max);
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let zero_y = MARGIN + plot_h / 2.0;
    let scale = plot_h / 2.0 / max_abs;
    let slot = (WIDTH - 2.0 * MARGIN) / cells.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <text x=\"{MARGIN}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">LMB t-values (* p &lt; {alpha})</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{zero_y:.1}\" x2=\"{:.1}\" y2=\"{zero_y:.1}\" stroke=\"black\"/>\n",
        WIDTH - MARGIN
    );
    for (i, c) in cells.iter().enumerate() {
        let t = if c.t.is_finite() { c.t } else { 0.0 };
        let h = t.abs() * scale;
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let w = slot * 0.7;
        let y = if t < 0.0 { zero_y } else { zero_y - h };
        let fill = if c.p < alpha { "#c0392b" } else { "#7f8c8d" };
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{w:.1}\" height=\"{h:.1}\" fill=\"{fill}\"/>\n"
        ));
        let label_y = if t < 0.0 { zero_y + h + 14.0 } else { zero_y - h - 4.0 };
        let star = if c.p < alpha { "*" } else { "" };
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{label_y:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.2}{star}</text>\n",
            x + w / 2.0,
            c.t
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x + w / 2.0,
            HEIGHT - 12.0,
            escape(&c.model_tag)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use convbias_core::biasspec::BiasType;
    use convbias_core::eval::{BiasDirection, DownstreamSummary};

    use super::*;

    fn cell(tag: &str, t: f64, p: f64) -> EvalReport {
        EvalReport {
            bias_type: BiasType::Religion1,
            model_tag: tag.into(),
            method: tag.into(),
            t,
            p,
            n: 10,
            removed: 0,
            significant: p < 0.05,
            direction: if t < 0.0 {
                BiasDirection::Stereotypical
            } else {
                BiasDirection::AntiStereotypical
            },
            downstream: DownstreamSummary::default(),
        }
    }

    #[test]
    fn one_bar_per_cell_and_stars_for_significant() {
        let svg = t_value_svg(&[cell("base", -4.0, 0.001), cell("cda", 0.5, 0.6)], 0.05);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("-4.00*"));
        assert!(svg.contains(">0.50<"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_input_is_still_valid_svg() {
        let svg = t_value_svg(&[], 0.05);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
