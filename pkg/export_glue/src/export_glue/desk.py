"""Desk-scale fixture model: a tiny CNN trained on upscaled 8x8 digit
images so the engine's test suite ships with a real trained classifier
without needing torch at test time."""

import numpy as np
import torch
from PIL import Image
from torch import nn

INPUT_SIDE = 64
MEAN = 0.5
STD = 0.5
CLASS_NAMES = [str(d) for d in range(10)]


def digits_corpus():
    """Deterministic 64x64 grayscale corpus from the classic 8x8 digits,
    exact-duplicate sources dropped. Returns (images[0,1], labels)."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    seen = set()
    images, labels = [], []
    for raw, label in zip(digits.images, digits.target):
        small = np.round(raw / 16.0 * 255.0).astype(np.uint8)
        key = small.tobytes()
        if key in seen:
            continue
        seen.add(key)
        pil = Image.fromarray(small, mode="L").resize(
            (INPUT_SIDE, INPUT_SIDE), Image.Resampling.BILINEAR)
        images.append(np.asarray(pil, dtype=np.float32) / 255.0)
        labels.append(int(label))
    return np.stack(images), np.array(labels, dtype=np.int64)


def write_corpus(out_dir, limit=None):
    """Write the corpus as PNG files named <idx>_<label>.png."""
    import os

    images, labels = digits_corpus()
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx, (image, label) in enumerate(zip(images, labels)):
        path = os.path.join(out_dir, f"{idx:04d}_{label}.png")
        Image.fromarray(np.round(image * 255.0).astype(np.uint8), mode="L").save(path)
        paths.append(path)
    return paths, labels


class DeskCNN(nn.Module):
    """Three conv blocks into global average pooling and a linear head.

    forward returns (conv_features, latent, logits); conv_features is the
    post-ReLU activation of the last block (B, 32, 8, 8).
    """

    def __init__(self, n_classes=10):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 16, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(16)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(32)
        self.conv3 = nn.Conv2d(32, 32, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(32)
        self.pool = nn.MaxPool2d(2)
        self.act = nn.ReLU()
        self.fc = nn.Linear(32, n_classes)

    def forward(self, x):
        x = self.pool(self.act(self.bn1(self.conv1(x))))
        x = self.pool(self.act(self.bn2(self.conv2(x))))
        conv_features = self.pool(self.act(self.bn3(self.conv3(x))))
        latent = conv_features.mean(dim=(2, 3))
        logits = self.fc(latent)
        return conv_features, latent, logits


def train_desk_model(seed=0, epochs=40, batch_size=64, lr=2e-3):
    """Train on the full corpus; returns (model.eval(), train_accuracy)."""
    torch.manual_seed(seed)
    images, labels = digits_corpus()
    x = torch.from_numpy((images[:, None, :, :] - MEAN) / STD)
    y = torch.from_numpy(labels)

    model = DeskCNN()
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=15, gamma=0.3)
    loss_fn = nn.CrossEntropyLoss()
    generator = torch.Generator().manual_seed(seed)

    model.train()
    for _ in range(epochs):
        order = torch.randperm(len(x), generator=generator)
        for start in range(0, len(x), batch_size):
            batch = order[start:start + batch_size]
            optimizer.zero_grad()
            _, _, logits = model(x[batch])
            loss = loss_fn(logits, y[batch])
            loss.backward()
            optimizer.step()
        scheduler.step()

    model.eval()
    with torch.no_grad():
        _, _, logits = model(x)
        accuracy = (logits.argmax(dim=1) == y).float().mean().item()
    return model, accuracy
