#include <gtest/gtest.h>

#include "fusionflow/config.hpp"

using namespace fusionflow;

TEST(Config, DefaultsAreValid) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.effective_n_steps(), 5u);
  c.dt = 4;
  EXPECT_EQ(c.effective_n_steps(), 20u);
  c.n_steps = 3;
  EXPECT_EQ(c.effective_n_steps(), 3u);
  EXPECT_EQ(c.network().n_steps, 3u);
}

TEST(Config, EchoReadsBackToSameConfig) {
  RunConfig c;
  apply_text(c,
             "variant = late\nbase_channels = 8\nlambda = 0.001\nscale_weights = 1, 0.5, 0.25, 0.125\n"
             "seed = 42\nmotion_x = -1.75\ne_mac = 1e-12\nsoft_reset = true\nneuron = if\ndt = 4\n");
  const std::string text = to_text(c);
  RunConfig back;
  apply_text(back, text);
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(back.net.variant, Variant::late);
  EXPECT_EQ(back.loss.scale_weights[3], 0.125);
  EXPECT_EQ(back.scene.motion_x, -1.75);
  EXPECT_EQ(back.train.seed, 42u);
  EXPECT_EQ(back.net.neuron, NeuronModel::if_);
  EXPECT_TRUE(back.net.sif.soft_reset);
  EXPECT_EQ(back.n_steps, 20u);  // the echo pins the derived step count
}

TEST(Config, LaterSourcesOverride) {
  RunConfig c;
  apply_text(c, "lr0 = 0.01\nepochs = 3\n");
  apply_setting(c, "epochs", "7");
  EXPECT_EQ(c.train.lr0, 0.01);
  EXPECT_EQ(c.train.epochs, 7u);
}

TEST(Config, Errors) {
  RunConfig c;
  EXPECT_THROW(apply_text(c, "no_such_key = 1\n"), InvalidInput);
  try {
    apply_text(c, "# comment\nepochs = 2\nbroken line\n", "x.cfg");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_setting(c, "epochs", "two"), InvalidInput);
  EXPECT_THROW(apply_setting(c, "epochs", "-1"), InvalidInput);
  EXPECT_THROW(apply_setting(c, "scale_weights", "1,2,3"), InvalidInput);
  EXPECT_THROW(apply_setting(c, "variant", "mid"), InvalidInput);
  EXPECT_THROW(apply_setting(c, "soft_reset", "maybe"), InvalidInput);
  c.dt = 2;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = RunConfig{};
  c.e_mac = -1;
  EXPECT_THROW(c.validate(), InvalidInput);
}
