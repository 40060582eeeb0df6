#pragma once
// Umbrella header: the whole library.
#include "attention.hpp"
#include "checkpoint.hpp"
#include "cli.hpp"
#include "data.hpp"
#include "embedding_io.hpp"
#include "errors.hpp"
#include "grad_check.hpp"
#include "gru.hpp"
#include "reader.hpp"
#include "rng.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"
#include "train.hpp"
#include "vocab.hpp"
