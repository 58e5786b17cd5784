import json
import math

import pytest
import torch

from roma.config import toy_config
from roma.crossim import global_loss, local_loss, sample_areas, temporal_loss_stacked
from roma.discriminator import build_multiscale, discriminate, g_adv_from_logits
from roma.errors import ConfigError, TrainingError
from roma.trainer import (CHECKPOINT_MAGIC, Batch, Trainer, build_networks, d_step_loss,
                          g_step_loss, load_checkpoint, read_checkpoint_header, train,
                          translate_fragments)

CFG = toy_config(steps=4, checkpoint_every=2, num_areas=8)


@pytest.fixture
def trainer(toy_root, tmp_path):
    return Trainer(CFG, toy_root, tmp_path / "run")


def params(module):
    return [p.detach().clone() for p in module.parameters()]


def same(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


def zero_head(nets):
    with torch.no_grad():
        nets.head.net[-1].weight.zero_()
        nets.head.net[-1].bias.zero_()


class TestGStepLoss:
    def test_zero_weights_leave_adversarial_term(self, trainer):
        cfg = CFG.replace(lambda_global=0.0, lambda_local=0.0, lambda_temporal=0.0)
        total, comps = g_step_loss(trainer.batch(0), trainer.nets, cfg)
        assert total.item() == comps["adv"].item()

    def test_identity_tokens_zero_structure(self, trainer):
        # an extractor that ignores frame content makes translated and input tokens
        # identical, so every structural component must vanish; float64 keeps the
        # check at 1e-9 rather than float32 rounding
        nets = trainer.nets
        real_extractor = nets.extractor

        class Fixed(torch.nn.Module):
            depth = real_extractor.depth

            def forward(self, frames, layers):
                blank = torch.zeros(frames.shape[0], 3, *frames.shape[-2:], dtype=torch.float64)
                grids = real_extractor(blank, layers)
                return [g.with_tokens(g.tokens + 0 * frames.sum().double()) for g in grids]

        nets.extractor = Fixed()
        nets.head.double()
        _, comps = g_step_loss(trainer.batch(0), nets, CFG)
        for name in ("global", "local", "temporal"):
            assert comps[name].item() == pytest.approx(0, abs=1e-9)

    def test_total_is_weighted_sum_of_independent_components(self, trainer):
        cfg = CFG.replace(lambda_global=1.5, lambda_local=0.25, lambda_temporal=3.0)
        batch = trainer.batch(3)
        nets = trainer.nets
        with torch.no_grad():
            total, comps = g_step_loss(batch, nets, cfg, step=3)
            # recompute every component from scratch
            b, t = batch.source.shape[:2]
            fake = translate_fragments(nets, batch.source).flatten(0, 1)
            xs = nets.extractor(batch.source.flatten(0, 1), nets.layers)
            ys = nets.extractor(fake, nets.layers)
            lg = global_loss(xs, ys)
            areas = sample_areas(16, 16, cfg.num_areas, 5, 5, (cfg.seed, 3, 2))
            ll = local_loss(xs, ys, areas)
            split = lambda gs: [g.with_tokens(g.tokens.reshape(b, t, *g.tokens.shape[1:]))  # noqa
                                for g in gs]
            lt = temporal_loss_stacked(split(xs), split(ys), cfg.dt)
            disc = nets.extractor(fake, type(nets.layers)((nets.disc_layer,)))[0]
            adv = g_adv_from_logits(discriminate(nets.head, build_multiscale(disc, cfg.scales)),
                                    cfg.non_saturating)
        expected = adv + 1.5 * lg + 0.25 * ll + 3.0 * lt
        assert total.item() == pytest.approx(expected.item(), abs=1e-9)
        for name, value in zip(("adv", "global", "local", "temporal"), (adv, lg, ll, lt)):
            assert comps[name].item() == pytest.approx(value.item(), abs=1e-9)

    def test_non_finite_raises_with_components(self, trainer):
        batch = trainer.batch(0)
        batch.source[0, 0, 0, 0, 0] = float("nan")
        with pytest.raises(TrainingError) as err:
            g_step_loss(batch, trainer.nets, CFG)
        assert set(err.value.components) == {"adv", "global", "local", "temporal"}


class TestDStepLoss:
    def test_zero_logit_head(self, trainer):
        zero_head(trainer.nets)
        loss = d_step_loss(trainer.batch(0), trainer.nets, CFG)
        assert loss.item() == pytest.approx(2 * math.log(2), abs=1e-6)

    def test_rejects_attached_generator_output(self, trainer):
        batch = trainer.batch(0)
        fake = translate_fragments(trainer.nets, batch.source)
        with pytest.raises(AssertionError):
            d_step_loss(batch, trainer.nets, CFG, fake=fake)

    def test_same_frames_both_slots(self, trainer):
        zero_head(trainer.nets)
        batch = trainer.batch(0)
        both = Batch(batch.source, batch.target)
        loss = d_step_loss(both, trainer.nets, CFG, fake=batch.target.unsqueeze(0))
        assert loss.item() >= 2 * math.log(2) - 1e-6


class TestStepIsolation:
    def test_parameters_move_only_where_expected(self, trainer):
        nets = trainer.nets
        ext_before = {k: v.clone() for k, v in nets.extractor.state_dict().items()}
        g0, h0 = params(nets.generator), params(nets.head)
        batch = trainer.batch(0)

        # D step alone
        fake = translate_fragments(nets, batch.source).detach()
        trainer.opt_d.zero_grad()
        d_step_loss(batch, nets, CFG, fake=fake).backward()
        trainer.opt_d.step()
        assert same(g0, params(nets.generator))
        assert not same(h0, params(nets.head))

        # G step alone
        h1 = params(nets.head)
        nets.head.requires_grad_(False)
        trainer.opt_g.zero_grad()
        g_step_loss(batch, nets, CFG)[0].backward()
        trainer.opt_g.step()
        assert same(h1, params(nets.head))
        assert not same(g0, params(nets.generator))

        for k, v in nets.extractor.state_dict().items():
            assert torch.equal(v, ext_before[k])

    def test_extractor_outputs_unchanged_by_training(self, trainer):
        frame = trainer.batch(0).target[:1]
        before = [g.tokens.clone() for g in trainer.nets.extractor(frame, trainer.nets.layers)]
        for _ in range(3):
            trainer.train_step()
        after = trainer.nets.extractor(frame, trainer.nets.layers)
        assert all(torch.equal(a, b.tokens) for a, b in zip(before, after))


class TestRecords:
    def test_additivity_every_step(self, trainer):
        for _ in range(3):
            r = trainer.train_step()
            weighted = (r["adv"] + CFG.lambda_global * r["global"] + CFG.lambda_local * r["local"]
                        + CFG.lambda_temporal * r["temporal"])
            assert r["loss_g"] == pytest.approx(weighted, abs=1e-5)


class TestTrainRuns:
    def test_zero_steps_writes_initial_checkpoint(self, toy_root, tmp_path):
        out = tmp_path / "run"
        t = train(CFG.replace(steps=0), toy_root, out)
        assert t.step == 0
        assert (out / "latest.ckpt").exists()
        assert read_checkpoint_header(out / "latest.ckpt")["step"] == 0

    def test_log_and_checkpoint_format(self, toy_root, tmp_path):
        out = tmp_path / "run"
        train(CFG, toy_root, out)
        lines = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in lines] == [0, 1, 2, 3]
        assert {"loss_d", "loss_g", "adv", "global", "local", "temporal", "wall_time"} <= set(lines[0])
        raw = (out / "latest.ckpt").read_bytes()
        assert raw.startswith(CHECKPOINT_MAGIC)
        header = read_checkpoint_header(out / "latest.ckpt")
        assert header["step"] == 4 and header["fingerprint"] == CFG.fingerprint()
        config, step, payload = load_checkpoint(out / "latest.ckpt")
        assert config == CFG and step == 4
        assert {"generator", "head", "opt_g", "opt_d", "step", "torch_rng"} <= set(payload)

    def test_resume_continues_step_counter(self, toy_root, tmp_path):
        out = tmp_path / "run"
        train(CFG.replace(steps=2), toy_root, out)
        train(CFG.replace(steps=4), toy_root, out, resume=True)
        steps = [json.loads(l)["step"] for l in (out / "log.jsonl").read_text().splitlines()]
        assert steps == [0, 1, 2, 3]

    def test_resume_rejects_other_config(self, toy_root, tmp_path):
        out = tmp_path / "run"
        train(CFG.replace(steps=1), toy_root, out)
        with pytest.raises(ConfigError):
            train(CFG.replace(steps=2, lambda_global=1.0), toy_root, out, resume=True)

    def test_non_finite_keeps_last_checkpoint(self, toy_root, tmp_path, monkeypatch):
        out = tmp_path / "run"
        cfg = CFG.replace(steps=4, checkpoint_every=1)
        trainer = Trainer(cfg, toy_root, out)
        trainer.run(steps=2)
        good = (out / "latest.ckpt").read_bytes()
        original = Trainer.batch

        def poisoned(self, step):
            b = original(self, step)
            b.source.fill_(float("nan"))
            return b

        monkeypatch.setattr(Trainer, "batch", poisoned)
        with pytest.raises(TrainingError):
            trainer.run(steps=4)
        assert (out / "latest.ckpt").read_bytes() == good


def test_build_networks_rejects_bad_layer():
    with pytest.raises(ConfigError):
        build_networks(toy_config(layers=(0, 9)))
