"""Train a small network with the built-in reverse-mode engine.

Fits sin(2 pi x) with a two-layer tanh net using dense layers and Adam, then
spot-checks one analytic gradient against a central finite difference. The
same engine backs the policy and the dynamics model.
"""

import numpy as np

from emberplan import autodiff as ad


def build_loss(params, x, y):
    h = ad.tanh(ad.dense(x, params["w1"], params["b1"]))
    pred = ad.dense(h, params["w2"], params["b2"])
    return ad.mse(pred, y)


def main():
    rng = np.random.default_rng(1)
    xs = rng.uniform(0.0, 1.0, (256, 1))
    ys = np.sin(2.0 * np.pi * xs)
    x = ad.constant(xs)
    y = ad.constant(ys)

    hidden = 32
    params = {
        "w1": ad.param(rng.normal(0.0, 0.5, (1, hidden))),
        "b1": ad.param(np.zeros(hidden)),
        "w2": ad.param(rng.normal(0.0, 0.5, (hidden, 1))),
        "b2": ad.param(np.zeros(1)),
    }
    n_params = sum(p.value.size for p in params.values())
    print(f"fitting sin(2 pi x), {n_params} parameters, Adam lr 1e-2")

    optimizer = ad.Adam(lr=1e-2)
    for step in range(801):
        loss = build_loss(params, x, y)
        grads = ad.gradients(loss, params)
        optimizer.step(params, grads)
        if step % 100 == 0:
            print(f"  step {step:>4}  mse {float(loss.value):.5f}")

    probe = np.array([[0.0], [0.25], [0.5], [0.75]])
    with ad.no_grad():
        h = ad.tanh(ad.dense(ad.constant(probe), params["w1"], params["b1"]))
        pred = ad.dense(h, params["w2"], params["b2"]).value.ravel()
    print("predictions:", " ".join(f"f({p[0]:.2f})={v:+.3f}"
                                   for p, v in zip(probe, pred)))

    # one entry of dL/dw1 against (f(w+eps) - f(w-eps)) / 2 eps
    loss = build_loss(params, x, y)
    analytic = ad.gradients(loss, params)["w1"][0, 0]
    eps = 1e-5
    flat = params["w1"].value
    saved = flat[0, 0]
    flat[0, 0] = saved + eps
    up = float(build_loss(params, x, y).value)
    flat[0, 0] = saved - eps
    down = float(build_loss(params, x, y).value)
    flat[0, 0] = saved
    fd = (up - down) / (2.0 * eps)
    print(f"\ngradient check on w1[0,0]: analytic {analytic:.8f}, "
          f"finite difference {fd:.8f}, "
          f"rel err {abs(analytic - fd) / max(abs(fd), 1e-12):.2e}")


if __name__ == "__main__":
    main()
