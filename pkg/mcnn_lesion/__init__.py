"""
mcnn-lesion - Additive-sample ensembles of micro-CNNs for skin lesion classification.

This package trains a sequence of small convolutional networks in which every
model after the first learns from the samples its predecessor scored poorly,
and fuses their predictions by taking, for each sample, the class from the
model that is most confident about it.

The package includes:
- A numpy tensor layer with hand-written gradients (convolution, ReLU,
  max pooling, dense, softmax cross-entropy, SGD with momentum)
- The micro-CNN classifier and its binary model format
- Additive sample selection, ensemble training and max-score fusion
- One-vs-rest ROC/AUC evaluation with CSV and SVG exports
- Netpbm image and label manifest I/O plus a synthetic seven-class dataset
- A command-line interface (synth, train, eval, predict)
"""

__version__ = "1.0.0"
