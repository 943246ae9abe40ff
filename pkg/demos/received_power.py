# coding: utf-8

# # Received power of a rectangular pulse
#
# The receiver sees the pulse convolved with the impulse response of whatever
# sits in front of the sensor. Here we integrate it numerically with the
# trapezoid rule and compare against the closed forms.

# In[1]:

import numpy as np

from unimix.weather import PulseModel, beer_lambert_power, received_power


# A constant response makes the integral the pulse energy, P0 * tau.

# In[2]:

pulse = PulseModel.rectangular(amplitude=1.0, duration=0.5)
print("constant H:", received_power(pulse, R=3.0))


# In a scattering medium the response decays like exp(-2 alpha r), so power
# falls off with range. The numeric value tracks the closed form closely.

# In[3]:

alpha = 0.06
fog = PulseModel.rectangular(1.0, 0.5, response=lambda r: np.exp(-2 * alpha * r))
for R in (5.0, 20.0, 50.0):
    num = received_power(fog, R)
    exact = beer_lambert_power(R, alpha)
    print(f"R={R:5.1f}  numeric={num:.10f}  closed={exact:.10f}  rel.err={abs(num / exact - 1):.1e}")


# Halving the step size cuts the error by about four, which is what a
# second-order rule should do.

# In[4]:

exact = beer_lambert_power(10.0, 0.8)
strong = PulseModel.rectangular(1.0, 0.5, response=lambda r: np.exp(-1.6 * r))
errs = [abs(received_power(strong, 10.0, n) - exact) for n in (32, 64, 128, 256)]
print("errors:", ["%.2e" % e for e in errs])
print("observed order:", np.round(np.log2(np.array(errs[:-1]) / errs[1:]), 3))
