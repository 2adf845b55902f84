from .tape import (Tape, Tensor, backward, constant, exp, log, softplus, relu, absolute,
                   sqrt, ndtr, log_ndtr, logsumexp, log_mean_exp, gaussian_logpdf_masked)
from .nn import DenseLayer, Parameter, bind, forward_dense, forward_stack, glorot_uniform
from .optim import SGD, Adam, Optimizer, make_optimizer
