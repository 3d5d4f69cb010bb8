#pragma once

#include "seg/anchor_init.hpp"
#include "seg/config.hpp"
#include "seg/encoder.hpp"
#include "seg/gradcheck.hpp"
#include "seg/graph_ops.hpp"
#include "seg/kg.hpp"
#include "seg/loss.hpp"
#include "seg/matcher.hpp"
#include "seg/matrix.hpp"
#include "seg/soft_labels.hpp"
#include "seg/synthetic.hpp"
#include "seg/tape.hpp"
#include "seg/text_embed.hpp"
#include "seg/trainer.hpp"
