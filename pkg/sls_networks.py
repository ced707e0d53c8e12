#!/usr/bin/env python3
"""
Shared latent space networks for OC <-> VC translation
Two generators (encoder + decoder each), a domain discriminator for OC
and a directional discriminator over (OC, VC) pairs
"""

from typing import Optional

import torch
import torch.nn as nn

from lumen_config import ConfigurationError

# Analytic parameter counts at 64 base channels, 5 + 5 residual blocks and 8 noise channels
VC_GENERATOR_PARAMETERS = 12_558_339
OC_GENERATOR_PARAMETERS = 12_626_179


class ResidualBlock(nn.Module):
    def __init__(self, features):
        super(ResidualBlock, self).__init__()

        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(features, features, 3),
            nn.InstanceNorm2d(features),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(features, features, 3),
            nn.InstanceNorm2d(features),
        )

    def forward(self, x):
        return x + self.block(x)


class Encoder(nn.Module):
    """c7s1-64, d128, d256, then residual blocks; image -> latent code at 1/4 resolution"""

    def __init__(self, base_channels=64, res_blocks=5):
        super(Encoder, self).__init__()
        self.latent_channels = base_channels * 4

        # c7s1-64
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, base_channels, 7),
            nn.InstanceNorm2d(base_channels),
            nn.ReLU(inplace=True),
        ]

        # d128, d256
        in_features = base_channels
        for _ in range(2):
            out_features = in_features * 2
            layers += [
                nn.Conv2d(in_features, out_features, 3, stride=2, padding=1),
                nn.InstanceNorm2d(out_features),
                nn.ReLU(inplace=True),
            ]
            in_features = out_features

        layers += [ResidualBlock(in_features) for _ in range(res_blocks)]
        self.model = nn.Sequential(*layers)

    def forward(self, image):
        check_image(image)
        return self.model(image)


class Decoder(nn.Module):
    """Residual blocks, u128, u64, c7s1-3 with tanh; latent code (+ noise) -> image"""

    def __init__(self, base_channels=64, res_blocks=5, noise_dim=0):
        super(Decoder, self).__init__()
        self.latent_channels = base_channels * 4
        self.noise_dim = noise_dim

        # Noise is broadcast over the latent grid and projected back to the latent width
        if noise_dim > 0:
            self.noise_projection = nn.Conv2d(self.latent_channels + noise_dim, self.latent_channels, 1)
        else:
            self.noise_projection = None

        layers = [ResidualBlock(self.latent_channels) for _ in range(res_blocks)]

        # u128, u64
        in_features = self.latent_channels
        for _ in range(2):
            out_features = in_features // 2
            layers += [
                nn.ConvTranspose2d(in_features, out_features, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(out_features),
                nn.ReLU(inplace=True),
            ]
            in_features = out_features

        # c7s1-3
        layers += [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_features, 3, 7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, latent, z=None):
        if latent.dim() != 4 or latent.shape[1] != self.latent_channels:
            raise ConfigurationError(
                f"Latent code must be (N, {self.latent_channels}, h, w), got {tuple(latent.shape)}")

        if self.noise_projection is not None:
            if z is None:
                raise ConfigurationError("OC decoder needs a noise vector")
            if z.dim() != 2 or z.shape[1] != self.noise_dim or z.shape[0] != latent.shape[0]:
                raise ConfigurationError(
                    f"Noise must be ({latent.shape[0]}, {self.noise_dim}), got {tuple(z.shape)}")
            grid = z[:, :, None, None].expand(-1, -1, latent.shape[2], latent.shape[3])
            latent = self.noise_projection(torch.cat([latent, grid], dim=1))
        elif z is not None:
            raise ConfigurationError("VC decoder takes no noise vector")

        return self.model(latent)


class Generator(nn.Module):
    def __init__(self, base_channels=64, res_blocks=5, noise_dim=0):
        """
        Encoder + decoder pair

        Args:
            base_channels: width of the first stage (latent width is 4x this)
            res_blocks: residual blocks in each half
            noise_dim: noise channels fed to the decoder, 0 for the VC generator
        """
        super(Generator, self).__init__()
        self.encoder = Encoder(base_channels, res_blocks)
        self.decoder = Decoder(base_channels, res_blocks, noise_dim)

    @property
    def noise_dim(self):
        return self.decoder.noise_dim

    def forward(self, image, z=None):
        return self.decoder(self.encoder(image), z)


class PatchDiscriminator(nn.Module):
    """70x70 PatchGAN: C64-C128-C256 (stride 2), C512 (stride 1), 1-channel sigmoid head"""

    def __init__(self, in_channels=3, base_channels=64, disc_layers=3):
        super(PatchDiscriminator, self).__init__()
        self.in_channels = in_channels

        def discriminator_block(in_filters, out_filters, stride, normalize=True):
            """Returns the layers of one discriminator stage"""
            layers = [nn.Conv2d(in_filters, out_filters, 4, stride=stride, padding=1)]
            if normalize:
                layers.append(nn.InstanceNorm2d(out_filters))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            return layers

        layers = discriminator_block(in_channels, base_channels, 2, normalize=False)
        features = base_channels
        for n in range(1, disc_layers):
            out_features = base_channels * min(2 ** n, 8)
            layers += discriminator_block(features, out_features, 2)
            features = out_features
        out_features = base_channels * min(2 ** disc_layers, 8)
        layers += discriminator_block(features, out_features, 1)
        layers += [nn.Conv2d(out_features, 1, 4, stride=1, padding=1), nn.Sigmoid()]

        self.model = nn.Sequential(*layers)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"Discriminator expects {self.in_channels} channels, got {tuple(x.shape)}")
        return self.model(x)


def check_image(image):
    """Raise unless image is (N, 3, H, W) with H, W multiples of 4"""
    if image.dim() != 4 or image.shape[1] != 3:
        raise ConfigurationError(f"Image must be (N, 3, H, W), got {tuple(image.shape)}")
    height, width = image.shape[2], image.shape[3]
    if height % 4 or width % 4:
        raise ConfigurationError(f"Image dims must be multiples of 4, got {height}x{width}")


def weights_init_normal(m):
    classname = m.__class__.__name__
    if classname.find("Conv") != -1:
        torch.nn.init.normal_(m.weight.data, 0.0, 0.02)
        if hasattr(m, "bias") and m.bias is not None:
            torch.nn.init.constant_(m.bias.data, 0.0)


def parameter_count(module):
    """Number of trainable parameters"""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def generator_parameter_count(generator):
    """Trainable parameters of one generator, noise projection included"""
    if not isinstance(generator, Generator):
        raise ConfigurationError(f"Expected a Generator, got {type(generator).__name__}")
    return parameter_count(generator)


def sample_noise(batch, noise_dim, generator: Optional[torch.Generator] = None, device='cpu', dtype=None):
    """Draw a batch of standard normal noise vectors from a seeded stream"""
    return torch.randn(batch, noise_dim, generator=generator, device=device,
                       dtype=dtype or torch.get_default_dtype())


# Data flow operations

def encode(encoder, image):
    return encoder(image)


def decode_vc(decoder, latent):
    return decoder(latent)


def decode_oc(decoder, latent, z):
    if z is None:
        raise ConfigurationError("decode_oc needs a noise vector")
    return decoder(latent, z)


def translate_to_oc(g_oc, image_vc, z):
    """VC image -> latent via En_oc -> OC image via De_oc(., z)"""
    return decode_oc(g_oc.decoder, encode(g_oc.encoder, image_vc), z)


def translate_to_vc(g_vc, image_oc):
    """OC image -> latent via En_vc -> VC image via De_vc"""
    return decode_vc(g_vc.decoder, encode(g_vc.encoder, image_oc))


def discriminate(d, image):
    return d(image)


def discriminate_dir(d, image_oc, image_vc):
    """Score an (OC, VC) pair; the OC image always comes first"""
    if image_oc.shape != image_vc.shape:
        raise ConfigurationError(
            f"Directional pair shapes differ: {tuple(image_oc.shape)} vs {tuple(image_vc.shape)}")
    return d(torch.cat([image_oc, image_vc], dim=1))


class SharedLatentModel(nn.Module):
    def __init__(self, base_channels=64, res_blocks=5, noise_dim=8, disc_layers=3):
        """
        All four networks of the translator

        Args:
            base_channels: generator and discriminator base width
            res_blocks: residual blocks per encoder / decoder
            noise_dim: channels of the OC noise vector
            disc_layers: stride-2 stages in each discriminator
        """
        super(SharedLatentModel, self).__init__()
        if noise_dim < 1:
            raise ConfigurationError("noise_dim must be >= 1")
        self.noise_dim = noise_dim

        self.g_oc = Generator(base_channels, res_blocks, noise_dim)
        self.g_vc = Generator(base_channels, res_blocks, 0)
        self.d_oc = PatchDiscriminator(3, base_channels, disc_layers)
        self.d_dir = PatchDiscriminator(6, base_channels, disc_layers)

    @classmethod
    def from_config(cls, config):
        return cls(config['base_channels'], config['res_blocks'], config['noise_dim'], config['disc_layers'])

    def generator_parameters(self):
        """Both generators, encoders included"""
        return list(self.g_oc.parameters()) + list(self.g_vc.parameters())

    def oc_from_vc(self, image_vc, z):
        return translate_to_oc(self.g_oc, image_vc, z)

    def vc_from_oc(self, image_oc):
        return translate_to_vc(self.g_vc, image_oc)

    def latent_from(self, image, domain):
        """Latent code of a VC image (via En_oc) or of an OC image (via En_vc)"""
        if domain == 'vc':
            return encode(self.g_oc.encoder, image)
        if domain == 'oc':
            return encode(self.g_vc.encoder, image)
        raise ConfigurationError(f"Unknown domain: {domain}")


def build_model(config, seed=None):
    """Create and initialize the model from a config dict"""
    if seed is not None:
        torch.manual_seed(seed)
    model = SharedLatentModel.from_config(config)
    model.apply(weights_init_normal)
    return model


def main():
    """Print network sizes for the default architecture"""
    model = SharedLatentModel()
    print("=== Lumen shared latent model ===")
    print(f"G_oc parameters: {generator_parameter_count(model.g_oc):,} (expected {OC_GENERATOR_PARAMETERS:,})")
    print(f"G_vc parameters: {generator_parameter_count(model.g_vc):,} (expected {VC_GENERATOR_PARAMETERS:,})")
    print(f"D_oc parameters: {parameter_count(model.d_oc):,}")
    print(f"D_dir parameters: {parameter_count(model.d_dir):,}")

    with torch.no_grad():
        image = torch.zeros(1, 3, 64, 64)
        latent = encode(model.g_oc.encoder, image)
        print(f"64x64 image -> latent {tuple(latent.shape)}")
        print(f"64x64 image -> patch scores {tuple(discriminate(model.d_oc, image).shape)}")


if __name__ == "__main__":
    main()
