//! Bearer tokens and credential checks.
//!
//! Tokens are `base64url(claims).base64url(hmac_sha256(key, claims))`. The
//! claims carry the user id and an absolute expiry, so verification needs no
//! store lookup.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use conduit_core::{Timestamp, UserId};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult, ErrorKind};
use crate::types::AccessToken;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Claims {
    sub: UserId,
    exp: i64,
}

#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
    ttl_secs: f64,
}

impl TokenSigner {
    pub fn new(key: impl Into<Vec<u8>>, ttl_secs: f64) -> Self {
        TokenSigner { key: key.into(), ttl_secs }
    }

    fn mac(&self, payload: &[u8]) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length");
        mac.update(payload);
        mac
    }

    pub fn issue(&self, user_id: UserId, now: Timestamp) -> AccessToken {
        let expires_at = now.plus_secs(self.ttl_secs);
        let claims = serde_json::to_vec(&Claims { sub: user_id, exp: expires_at.0 }).expect("claims serialize");
        let sig = self.mac(&claims).finalize().into_bytes();
        AccessToken {
            access_token: format!("{}.{}", URL_SAFE_NO_PAD.encode(&claims), URL_SAFE_NO_PAD.encode(sig)),
            token_type: "bearer".into(),
            user_id,
            expires_at,
        }
    }

    pub fn verify(&self, token: &str, now: Timestamp) -> ApiResult<UserId> {
        let bad = || ApiError::new(ErrorKind::AuthFailed, "invalid or expired token");
        let (payload, sig) = token.split_once('.').ok_or_else(bad)?;
        let payload = URL_SAFE_NO_PAD.decode(payload).map_err(|_| bad())?;
        let sig = URL_SAFE_NO_PAD.decode(sig).map_err(|_| bad())?;
        self.mac(&payload).verify_slice(&sig).map_err(|_| bad())?;
        let claims: Claims = serde_json::from_slice(&payload).map_err(|_| bad())?;
        if now.0 >= claims.exp {
            return Err(bad());
        }
        Ok(claims.sub)
    }
}

/// Salted SHA-256 of a password, hex encoded.
pub fn hash_credential(username: &str, password: &str) -> String {
    let mut h = Sha256::new();
    h.update(username.as_bytes());
    h.update([0u8]);
    h.update(password.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A pending device authorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCode {
    pub device_code: String,
    pub user_code: String,
    pub verification_uri: String,
    pub interval_secs: u32,
}

/// Browser-based device authorization, for deployments fronted by an
/// external identity provider.
pub trait DeviceCodeFlow: Send + Sync {
    fn start(&self) -> ApiResult<DeviceCode>;
    /// `Ok(None)` while the user has not yet approved.
    fn poll(&self, code: &DeviceCode) -> ApiResult<Option<AccessToken>>;
}

/// The flow used when no identity provider is configured.
pub struct NoDeviceFlow;

impl DeviceCodeFlow for NoDeviceFlow {
    fn start(&self) -> ApiResult<DeviceCode> {
        Err(ApiError::new(ErrorKind::Unavailable, "device authorization is not configured"))
    }

    fn poll(&self, _code: &DeviceCode) -> ApiResult<Option<AccessToken>> {
        self.start().map(|_| None)
    }
}
