import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from adaptation.conditioning import CENTER_ORDER, Center, Modality
from adaptation.manifests import load_source_manifest
from adaptation.phantoms import (
    CENTER_STYLES,
    HIDDEN_EVAL_DIR,
    MANIFEST_FILE,
    case_seed,
    generate_anatomy,
    generate_dataset,
    generate_phantom,
)
from adaptation.volume_io import load_mask


class TestUtils:
        '''
        Utility class to collect repetitive setup tasks.
        '''
        @staticmethod
        def iou(a, b):
            union = np.logical_or(a, b).sum()
            return np.logical_and(a, b).sum() / union if union else 1.0


class PhantomTests(SimpleTestCase):

    def test_shared_anatomy_across_styles(self):
        '''
        Test that one seed gives one mask and different intensities per style.
        '''
        t1, t1_mask = generate_phantom(3, Modality.T1W, Center.LDN, size=(32, 32, 32))
        t2, t2_mask = generate_phantom(3, Modality.T2W, Center.LDN, size=(32, 32, 32))
        self.assertTrue(np.array_equal(t1_mask.labels, t2_mask.labels))
        self.assertFalse(np.array_equal(t1.data, t2.data))

    def test_all_four_labels(self):
        '''
        Test that the label histogram holds background, both VS parts and cochlea.
        '''
        for seed in range(5):
            _, mask = generate_phantom(seed, Modality.T1W, Center.ETZ, size=(32, 32, 32))
            self.assertEqual(set(np.unique(mask.labels)), {0, 1, 2, 3})

    def test_contrast_polarity(self):
        '''
        Test a bright T1 tumour and a dark T2 tumour with bright cochleae.
        '''
        t1, mask = generate_phantom(1, Modality.T1W, Center.ETZ, size=(32, 32, 32))
        t2, _ = generate_phantom(1, Modality.T2W, Center.ETZ, size=(32, 32, 32))
        tumour = np.isin(mask.labels, (1, 2))
        cochlea = mask.labels == 3
        background = mask.labels == 0
        self.assertGreater(t1.data[tumour].mean(), t1.data[background].mean())
        self.assertLess(t2.data[tumour].mean(), t2.data[background].mean())
        self.assertGreater(t2.data[cochlea].mean(), t2.data[background].mean())

    def test_center_styles_separate(self):
        '''
        Test a mean intensity gap of at least 0.1 between center styles on one anatomy.
        '''
        means = {
            center: generate_phantom(4, Modality.T1W, center, size=(32, 32, 32))[0].data.mean()
            for center in CENTER_ORDER
        }
        self.assertGreaterEqual(means[Center.LDN] - means[Center.ETZ], 0.1)
        self.assertGreaterEqual(means[Center.ETZ] - means[Center.UKM], 0.1)

    def test_style_table(self):
        '''
        Test the declared gamma and noise per center.
        '''
        self.assertEqual([CENTER_STYLES[c].gamma for c in CENTER_ORDER], [0.7, 1.0, 1.4])
        self.assertEqual([CENTER_STYLES[c].noise_sigma for c in CENTER_ORDER], [0.01, 0.02, 0.03])

    def test_deterministic(self):
        '''
        Test that the same seed gives bit-identical phantoms.
        '''
        first = generate_phantom(9, Modality.T2W, Center.UKM, size=(16, 20, 24))
        second = generate_phantom(9, Modality.T2W, Center.UKM, size=(16, 20, 24))
        self.assertTrue(np.array_equal(first[0].data, second[0].data))
        self.assertTrue(np.array_equal(first[1].labels, second[1].labels))

    def test_intensities_in_unit_interval(self):
        '''
        Test that rendered volumes lie in [0, 1].
        '''
        volume, _ = generate_phantom(2, Modality.T2W, Center.UKM, size=(16, 16, 16))
        self.assertGreaterEqual(float(volume.data.min()), 0.0)
        self.assertLessEqual(float(volume.data.max()), 1.0)

    def test_size_too_small(self):
        '''
        Test that extents below 16 are rejected.
        '''
        with self.assertRaisesMessage(ValueError, 'phantom size too small'):
            generate_phantom(0, Modality.T1W, Center.LDN, size=(15, 32, 32))

    def test_structures_inside_and_disjoint(self):
        '''
        Test that no structure touches the border and VS and cochlea never overlap.
        '''
        for seed in range(10):
            labels = generate_anatomy(seed, (32, 32, 32)).labels
            border = np.ones(labels.shape, dtype=bool)
            border[1:-1, 1:-1, 1:-1] = False
            self.assertFalse(labels[border].any())
            # one label per voxel, so disjointness means each structure keeps its own label
            self.assertTrue(np.isin(labels, (1, 2)).any())
            self.assertTrue((labels == 3).any())

    def test_disjoint_seeds_differ(self):
        '''
        Test mean foreground IoU below 0.5 across seed pairs.
        '''
        scores = []
        for seed in range(10):
            a = generate_anatomy(case_seed(0, seed), (32, 32, 32)).labels > 0
            b = generate_anatomy(case_seed(0, seed + 100), (32, 32, 32)).labels > 0
            scores.append(TestUtils.iou(a, b))
        self.assertLess(float(np.mean(scores)), 0.5)


class DatasetTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_counts_and_hidden_masks(self):
        '''
        Test 6 labelled T1 and 9 unlabelled T2 entries, with 9 hidden masks.
        '''
        entries = generate_dataset(0, 6, 9, self.root, size=(16, 16, 16))
        manifest = load_source_manifest(self.root / MANIFEST_FILE)
        self.assertEqual(len(manifest), 15)
        self.assertEqual(len(entries), 15)
        self.assertEqual(sum(1 for e in manifest if e.modality == Modality.T1W and e.labeled), 6)
        self.assertEqual(sum(1 for e in manifest if e.modality == Modality.T2W and not e.labeled), 9)
        hidden = sorted(path.name for path in (self.root / HIDDEN_EVAL_DIR).glob('*.fgv'))
        self.assertEqual(len(hidden), 9)
        hidden_manifest = load_source_manifest(self.root / HIDDEN_EVAL_DIR / MANIFEST_FILE)
        self.assertTrue(all(entry.labeled for entry in hidden_manifest))
        for entry in hidden_manifest:
            self.assertEqual(set(np.unique(load_mask(entry.mask_path).labels)), {0, 1, 2, 3})

    def test_round_robin_centers(self):
        '''
        Test that centers cycle per modality.
        '''
        generate_dataset(1, 4, 3, self.root, size=(16, 16, 16))
        rows = json.loads((self.root / MANIFEST_FILE).read_text())
        self.assertEqual([row['center'] for row in rows], ['ldn', 'etz', 'ukm', 'ldn', 'ldn', 'etz', 'ukm'])

    def test_nifti_output(self):
        '''
        Test that the dataset can be written as NIfTI.
        '''
        generate_dataset(2, 1, 1, self.root, size=(16, 16, 16), suffix='.nii.gz')
        self.assertTrue((self.root / 'images' / 't1_000.nii.gz').exists())
        self.assertTrue((self.root / 'masks' / 't1_000.nii.gz').exists())

    def test_counts_must_be_positive(self):
        '''
        Test that zero volumes of either modality are rejected.
        '''
        with self.assertRaises(ValueError):
            generate_dataset(0, 0, 3, self.root)
