//! Gnuplot script emission for the study outputs.
//!
//! The pipelines write plain CSVs; these scripts render them without
//! pulling any plotting dependency into the build.

use std::path::PathBuf;

use crate::error::CoreResult;

use super::pipeline::DatasetLayout;

fn write_script(layout: &DatasetLayout, name: &str, body: &str) -> CoreResult<PathBuf> {
    let dir = layout.reports_dir().join("plots");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

pub fn gain_matrix_script(layout: &DatasetLayout) -> CoreResult<PathBuf> {
    write_script(
        layout,
        "gain_matrix.gp",
        r#"set datafile separator ','
set title 'Denoising gain: training SNR vs test SNR'
set xlabel 'test level index'
set ylabel 'train level index'
set view map
set palette defined (0 'red', 1 'white', 2 'green')
set cblabel 'gain'
plot '../gain_matrix.csv' matrix rowheaders columnheaders with image notitle
"#,
    )
}

pub fn sweep_script(layout: &DatasetLayout) -> CoreResult<PathBuf> {
    write_script(
        layout,
        "sweep.gp",
        r#"set datafile separator ','
set multiplot layout 2,1
set title 'Denoising gain vs Prandtl parameter'
set xlabel 'sigma'
set ylabel 'mean gain'
plot '../sweep_gain.csv' using 1:3 skip 1 with linespoints title 'gain'
set title 'Local maxima of x(t)'
set ylabel 'max x'
plot '../sweep_bifurcation.csv' using 1:2 skip 1 with dots title 'maxima'
unset multiplot
"#,
    )
}

pub fn noise_study_script(layout: &DatasetLayout) -> CoreResult<PathBuf> {
    write_script(
        layout,
        "noise_study.gp",
        r#"set datafile separator ','
set title 'Denoising gain by noise color'
set xlabel 'spectral exponent'
set ylabel 'gain'
plot '../noise_study_gains.csv' using 1:3 skip 1 with points pt 7 title 'per seed', \
     '../noise_study_summary.csv' using 1:2 skip 1 with linespoints lw 2 title 'mean'
"#,
    )
}

pub fn summary_script(layout: &DatasetLayout) -> CoreResult<PathBuf> {
    write_script(
        layout,
        "summary.gp",
        r#"set datafile separator ','
set title 'Validation NMSE by stage'
set ylabel 'NMSE'
set logscale y
set style data points
plot '../summary.csv' using 3:5 skip 1 with points pt 7 title 'runs'
"#,
    )
}
