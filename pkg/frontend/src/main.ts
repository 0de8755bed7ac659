import { Api } from "./api";
import { App } from "./app";
import { Session } from "./session";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

Session.connect(new Api(""))
  .then((session) => new App(root, session))
  .catch((err) => {
    root.textContent = `could not reach the annotation service: ${err}`;
  });
