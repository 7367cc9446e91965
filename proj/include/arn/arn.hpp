#pragma once

#include "arn/core.hpp"
#include "arn/tensor.hpp"
#include "arn/layers.hpp"
#include "arn/network.hpp"
#include "arn/losses.hpp"
#include "arn/gradcheck.hpp"
#include "arn/data.hpp"
#include "arn/evaluator.hpp"
#include "arn/oracle.hpp"
#include "arn/trainer.hpp"
#include "arn/config.hpp"
#include "arn/io.hpp"
#include "arn/commands.hpp"
