//! Attenuation -> temperature -> k-space chain shared by truth synthesis,
//! ensemble propagation and reconstruction.

use crate::bioheat::{solve_pennes, SolverSettings, TemperatureHistory};
use crate::error::{Error, Result};
use crate::mrsignal::{complex_image, kspace_forward, KSpaceSignal, MrProtocol};
use crate::phantom::Phantom;

/// One forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub history: TemperatureHistory,
    /// Noiseless k-space at the fusion time.
    pub signal: KSpaceSignal,
}

#[derive(Debug, Clone)]
pub struct ForwardModel<'a> {
    pub phantom: &'a Phantom,
    pub protocol: &'a MrProtocol,
    settings: SolverSettings,
    pub fusion_time: f64,
    pub readout_axis: usize,
}

impl<'a> ForwardModel<'a> {
    /// `fusion_time` is added to the settings' output times if missing.
    /// The readout runs along axis 0 in 2D (lines are k_y) and along k_z in 3D.
    pub fn new(
        phantom: &'a Phantom,
        protocol: &'a MrProtocol,
        settings: &SolverSettings,
        fusion_time: f64,
    ) -> Result<Self> {
        if !(fusion_time > 0.0 && fusion_time.is_finite()) {
            return Err(Error::validation("fusion_time", "must be positive"));
        }
        protocol.validate()?;
        let mut settings = settings.clone();
        if !settings.output_times.iter().any(|&t| t == fusion_time) {
            settings.output_times.push(fusion_time);
            settings.output_times.sort_by(f64::total_cmp);
        }
        Ok(Self {
            phantom,
            protocol,
            settings,
            fusion_time,
            readout_axis: default_readout_axis(phantom.grid.ndim()),
        })
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// Pre-heating reference temperature (u = u0 everywhere).
    pub fn baseline(&self) -> Vec<f64> {
        vec![self.phantom.boundary.initial_temperature; self.phantom.grid.len()]
    }

    /// k-space of a temperature field relative to the baseline.
    pub fn signal_of(&self, temperature: &[f64]) -> Result<KSpaceSignal> {
        let img = complex_image(
            &self.phantom.grid,
            &self.phantom.labels,
            temperature,
            &self.baseline(),
            self.protocol,
        )?;
        Ok(kspace_forward(&img, self.readout_axis))
    }

    pub fn temperature(&self, mu: &[f64]) -> Result<TemperatureHistory> {
        solve_pennes(self.phantom, mu, &self.settings)
    }

    pub fn simulate(&self, mu: &[f64]) -> Result<Simulation> {
        let history = self.temperature(mu)?;
        let at_fusion = history
            .at(self.fusion_time)
            .expect("fusion time is always an output time");
        let signal = self.signal_of(&at_fusion.values)?;
        Ok(Simulation { history, signal })
    }
}

/// Frequency-encode axis for a grid of `ndim` axes.
pub fn default_readout_axis(ndim: usize) -> usize {
    if ndim == 3 {
        2
    } else {
        0
    }
}
