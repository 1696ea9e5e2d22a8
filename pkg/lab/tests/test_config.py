import json
import tempfile
from pathlib import Path

from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from lab.config import RunConfig


class RunConfigTests(SimpleTestCase):

    def write_config(self, data):
        handle = tempfile.NamedTemporaryFile('w', suffix='.json', delete=False)
        json.dump(data, handle)
        handle.close()
        self.addCleanup(Path(handle.name).unlink)
        return handle.name

    def test_explicit_options_override_file(self):
        path = self.write_config({'group': 'z2', 'radius': 3, 'seed': 4})
        config = RunConfig.from_options('ball', {'config': path, 'radius': 5, 'verbosity': 1})
        self.assertEqual(config.group, 'z2')
        self.assertEqual(config.radius, 5)
        self.assertEqual(config.seed, 4)

    def test_unknown_keys_in_file(self):
        path = self.write_config({'group': 'z2', 'colour': 3})
        with self.assertRaises(ValidationError):
            RunConfig.from_options('ball', {'config': path})

    def test_unreadable_file(self):
        with self.assertRaises(ValidationError):
            RunConfig.from_options('ball', {'config': '/nonexistent/coarse-lab.json'})

    def test_scale_must_exceed_one(self):
        with self.assertRaises(ValidationError) as ctx:
            RunConfig.from_options('decompose', {'group': 'z1', 'scale': 1})
        self.assertIn('scale', ctx.exception.message_dict)

    def test_rational_stretch(self):
        self.assertEqual(RunConfig.from_options('decompose', {'stretch': '7/2'}).stretch, '7/2')
        with self.assertRaises(ValidationError):
            RunConfig.from_options('decompose', {'stretch': 'seven'})
        with self.assertRaises(ValidationError):
            RunConfig.from_options('decompose', {'stretch': '1/2'})

    def test_profile_exponent_range(self):
        with self.assertRaises(ValidationError):
            RunConfig.from_options('profile', {'p': 3.0})

    def test_unknown_format(self):
        with self.assertRaises(ValidationError):
            RunConfig.from_options('ball', {'format': 'xml'})

    def test_require(self):
        config = RunConfig.from_options('walk', {'group': 'z1'})
        with self.assertRaises(ValidationError) as ctx:
            config.require('group', 'stat')
        self.assertEqual(list(ctx.exception.message_dict), ['stat'])

    def test_parameters_keep_zero_values(self):
        config = RunConfig.from_options('growth', {'group': 'z1', 'radius': 0, 'seed': 0})
        self.assertEqual(config.parameters(), {'subcommand': 'growth', 'group': 'z1', 'radius': 0, 'seed': 0})
