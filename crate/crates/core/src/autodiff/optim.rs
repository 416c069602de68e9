use super::params::ParamStore;

/// SGD with momentum and L2 weight decay, applied to every parameter:
/// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
pub fn sgd_momentum_step(store: &mut ParamStore, lr: f64, momentum: f64, weight_decay: f64) {
    for p in store.iter_mut() {
        let (value, grad, vel) = (p.value.data_mut(), p.grad.data(), p.velocity.data_mut());
        for ((x, g), v) in value.iter_mut().zip(grad).zip(vel.iter_mut()) {
            *v = momentum * *v + g + weight_decay * *x;
            *x -= lr * *v;
        }
    }
}
