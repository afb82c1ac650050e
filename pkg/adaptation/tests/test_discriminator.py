import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase
from torch.func import functional_call

from adaptation.conditioning import CODE_DIM, Center, Modality, Plane, build_code
from adaptation.discriminator import Discriminator, DiscriminatorConfig, load_discriminator, save_discriminator
from adaptation.nn_core import parameter_digest


class TestUtils:
        '''
        Utility class to collect repetitive setup tasks.
        '''
        @staticmethod
        def discriminator(seed=0):
            '''
            Desk-scale discriminator with seeded weights.
            '''
            torch.manual_seed(seed)
            return Discriminator(DiscriminatorConfig.desk_scale())

        @staticmethod
        def code(center=Center.LDN):
            return build_code(Modality.T2W, center, Plane.AXIAL)


class DiscriminateTests(SimpleTestCase):

    def test_desk_scale_map(self):
        '''
        Test that a 32x32 slice scores to a 2x2 single-channel map.
        '''
        scores = TestUtils.discriminator().discriminate(torch.rand(1, 1, 32, 32), TestUtils.code())
        self.assertEqual(tuple(scores.shape), (1, 1, 2, 2))

    def test_default_map(self):
        '''
        Test that a 256x256 slice scores to a 16x16 map at the default ladder.
        '''
        torch.manual_seed(0)
        with torch.no_grad():
            scores = Discriminator()(torch.rand(1, 1, 256, 256), TestUtils.code())
        self.assertEqual(tuple(scores.shape), (1, 1, 16, 16))

    def test_shape_law(self):
        '''
        Test output = input / 16 over several valid extents.
        '''
        disc = TestUtils.discriminator()
        for height, width in ((16, 16), (48, 32), (64, 80)):
            with torch.no_grad():
                scores = disc(torch.rand(2, 1, height, width), TestUtils.code())
            self.assertEqual(tuple(scores.shape), (2, 1, height // 16, width // 16))

    def test_invalid_extent(self):
        '''
        Test that extents not divisible by 16 are rejected.
        '''
        with self.assertRaisesMessage(ValueError, 'not divisible by 16'):
            TestUtils.discriminator()(torch.rand(1, 1, 40, 32), TestUtils.code())

    def test_four_hyper_stages_and_plain_head(self):
        '''
        Test the layer layout: four HyperConv stages then a 1x1 convolution.
        '''
        disc = TestUtils.discriminator()
        self.assertEqual(len(disc.stages), 4)
        self.assertEqual([stage.out_channels for stage in disc.stages], [8, 16, 32, 64])
        self.assertEqual(disc.head.kernel_size, (1, 1))
        self.assertEqual(disc.head.out_channels, 1)

    def test_code_sensitivity(self):
        '''
        Test that single-bit code changes move the scores in at least 99 of 100 pairs.
        '''
        disc = TestUtils.discriminator(1)
        x = torch.rand(1, 1, 16, 16)
        rng = np.random.default_rng(2)
        changed = 0
        with torch.no_grad():
            for _ in range(100):
                code = rng.integers(0, 2, CODE_DIM).astype(np.float32)
                other = code.copy()
                bit = rng.integers(CODE_DIM)
                other[bit] = 1 - other[bit]
                difference = (disc(x, torch.as_tensor(code)) - disc(x, torch.as_tensor(other))).abs().max()
                changed += int(difference > 1e-6)
        self.assertGreaterEqual(changed, 99)

    def test_gradients_match_finite_differences(self):
        '''
        Test input and parameter gradients at float64 on a 16x16 slice.
        '''
        torch.manual_seed(3)
        disc = Discriminator(DiscriminatorConfig(channels=(2, 2, 2, 2))).double()
        names = [name for name, _ in disc.named_parameters()]
        values = tuple(p.detach().clone().requires_grad_(True) for p in disc.parameters())
        code = TestUtils.code(Center.UKM).as_tensor(dtype=torch.float64)

        def score(x, *parameters):
            return functional_call(disc, dict(zip(names, parameters)), (x, code)).sum()

        x = torch.rand(1, 1, 16, 16, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(score, (x,) + values, eps=1e-6, atol=1e-5, rtol=1e-4))

    def test_save_and_load(self):
        '''
        Test that a saved discriminator restores its config and weights.
        '''
        disc = TestUtils.discriminator(4)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = load_discriminator(save_discriminator(disc, Path(tmp) / 'discriminator.pt'))
        self.assertEqual(loaded.config, disc.config)
        self.assertEqual(parameter_digest(loaded), parameter_digest(disc))
