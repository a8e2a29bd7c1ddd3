import { ApiClient } from "./api.js";
import { ChatController } from "./ui.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
new ChatController(new ApiClient(""), root, window.localStorage);
