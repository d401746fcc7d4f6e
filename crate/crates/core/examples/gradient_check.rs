//! Compare backpropagation against central differences on a tiny network.

use spim::neural::{backward, forward, loss_mse, DropoutMask, Mode, Model, NetworkArch};

fn main() -> spim::Result<()> {
    let arch = NetworkArch {
        n_r: 4,
        n_t: 4,
        planes: 3,
        conv_layers: 2,
        filters: 2,
        kernel_x: 3,
        kernel_y: 3,
        fc_units: 4,
        dropout: 0.5,
        output_dim: 6,
        pool_x: 3,
        pool_y: 3,
    };
    let mut model = Model::<f64>::init(&arch, 11)?;
    let x: Vec<f64> = (0..arch.input_len()).map(|i| (i as f64 * 0.71).sin()).collect();
    let y: Vec<f64> = (0..arch.output_dim).map(|i| (i as f64 * 0.3).cos()).collect();
    let mask = DropoutMask::draw(&arch, arch.dropout, 11, 1);
    let (grad, loss, _) = backward(&model, &x, &y, Some(&mask))?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = model.theta[i];
        model.theta[i] = orig + h;
        let up = loss_mse(&forward(&model, &x, Some(&mask), Mode::Train)?, &y);
        model.theta[i] = orig - h;
        let down = loss_mse(&forward(&model, &x, Some(&mask), Mode::Train)?, &y);
        model.theta[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
    }
    println!("loss {loss:.6}, {} parameters, max relative error {worst:.2e}", grad.len());
    Ok(())
}
