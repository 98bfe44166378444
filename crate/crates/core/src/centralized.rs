//! Single-site GAN trainer used as the reference trajectory for the
//! federated protocols.

use crate::gan::{
    disc_loss_grad, gen_forward, gen_loss_param_grad, sample_noise, sample_real, BatchKind, GanNetworks, GeneratorLoss,
};
use crate::nn::ModelParams;
use crate::optim::{Direction, Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::tensor::Matrix;
use crate::Result;

/// One step is: draw `z_d`, generate `x_d`, draw a real batch, ascend the
/// discriminator, draw `z_g`, descend the generator against the updated
/// discriminator. Noise and real batches come from separate streams.
#[derive(Debug, Clone)]
pub struct CentralizedGan {
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    gen_opt: Optimizer,
    disc_opt: Optimizer,
    noise_rng: Rng,
    data_rng: Rng,
    batch: usize,
    form: GeneratorLoss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub disc_loss: f64,
    pub gen_loss: f64,
}

impl CentralizedGan {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        generator: ModelParams,
        discriminator: ModelParams,
        optimizer: OptimizerKind,
        lr_g: f64,
        lr_d: f64,
        batch: usize,
        form: GeneratorLoss,
        noise_rng: Rng,
        data_rng: Rng,
    ) -> Self {
        Self {
            generator,
            discriminator,
            gen_opt: Optimizer::new(optimizer, lr_g),
            disc_opt: Optimizer::new(optimizer, lr_d),
            noise_rng,
            data_rng,
            batch,
            form,
        }
    }

    pub fn step(&mut self, nets: &GanNetworks, data: &Matrix) -> Result<StepLosses> {
        let z_d = sample_noise(self.batch, nets.noise, &mut self.noise_rng)?;
        let x_d = gen_forward(&nets.generator, &self.generator, &z_d, BatchKind::FakeForDiscriminator)?;
        let x_r = sample_real(data, self.batch, &mut self.data_rng)?;
        let (disc_loss, g_theta) = disc_loss_grad(&nets.discriminator, &self.discriminator, &x_r, &x_d)?;
        self.disc_opt
            .step(&mut self.discriminator, &g_theta, Direction::Ascend)?;
        let z_g = sample_noise(self.batch, nets.noise, &mut self.noise_rng)?;
        let (gen_loss, g_w) = gen_loss_param_grad(nets, &self.generator, &self.discriminator, &z_g, self.form)?;
        self.gen_opt.step(&mut self.generator, &g_w, Direction::Descend)?;
        Ok(StepLosses { disc_loss, gen_loss })
    }
}
